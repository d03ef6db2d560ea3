#pragma once

#include "skrr/model.hpp"

#include <cstdint>

namespace skrr {

/// Token id reserved for the null (empty prompt) input. Generated calibration
/// data never contains it.
inline constexpr int kNullToken = 0;

/// Fraction of the carrier channel each interacting sub-block leaves behind.
inline constexpr double kInteractResidual = 0.05;

/// Attempts the INTERACT_PAIR construction gets before giving up.
inline constexpr int kInteractAttempts = 100;

/// ||f_null|| under dense, each single skip and the joint skip of a pair.
struct NullNormProbe {
    double dense = 0.0;
    double skip_first = 0.0;
    double skip_second = 0.0;
    double skip_both = 0.0;

    [[nodiscard]] double joint_over_single() const;
};

/// Seeded Gaussian encoder with planted redundancies. Weights are N(0, 1/d_model),
/// embeddings N(0, 1), norm gains 1.
///
/// NEAR_ZERO(eps) scales the sub-block's output weight by eps.
/// DUPLICATE_OF(j') copies every tensor of same-kind sub-block j'.
/// INTERACT_PAIR(j') turns two FFN sub-blocks into a redundant pair acting on a
/// carrier channel that only the null input excites: either one alone removes
/// most of the carrier, so a single skip leaves the null feature small, while
/// skipping both lets it through the projection and blows up ||f_null||. The
/// pair is an exact no-op on every other token. The construction is verified
/// (joint/single norm ratio >= 10) and re-sampled up to kInteractAttempts times.
ModelPackage generate_synthetic(const EncoderConfig& config, std::uint64_t seed, const RedundancySpec& spec = {});

NullNormProbe probe_null_norms(const ModelPackage& pkg, SubBlockId first, SubBlockId second);

} // namespace skrr
