#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace metatsrl {

/// Philox4x32-10 block function (Salmon et al., counter-based).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// SplitMix64 finalizer, used to fold indices into stream identifiers.
std::uint64_t mix64(std::uint64_t x);

/// Folds a list of indices (task, episode, run, ...) into one stream id.
std::uint64_t fold_stream_id(std::initializer_list<std::uint64_t> parts);

/// Deterministic random stream keyed by (seed, stream_id).
///
/// The generator is Philox4x32-10: the 64-bit seed is the key, and the
/// 128-bit counter holds (block index, stream_id). Draws depend only on
/// (seed, stream_id) and the number of prior draws, never on threads.
/// Normals use Box-Muller on two 53-bit uniforms.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    /// Independent child stream; same (parent, tag) always gives the same child.
    RngStream child(std::uint64_t tag) const;
    RngStream child(std::initializer_list<std::uint64_t> tags) const;

    std::uint64_t next_u64();
    /// Uniform on [0, 1).
    double uniform();
    /// Standard normal.
    double normal();

    // UniformRandomBitGenerator, for std::shuffle and friends.
    using result_type = std::uint64_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    result_type operator()() { return next_u64(); }

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t block_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int buffered_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace metatsrl
