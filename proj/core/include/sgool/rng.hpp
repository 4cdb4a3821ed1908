#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sgool {

// All randomness in a run flows from one master seed through named streams:
// stream("data"), stream("init"), stream("noise"), stream("latent"), ...
// Stream seeds are derived by hashing the name into the master seed, so adding
// a consumer to one stream never perturbs the draws of another.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng stream(std::uint64_t master_seed, std::string_view name);

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform();
    // uniform integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n);
    // standard normal via Box-Muller (kept in-house so draws are identical
    // across standard library implementations)
    double normal();

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace sgool
