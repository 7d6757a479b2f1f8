#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace salab {

// SplitMix64 step, used both as a stream-splitting hash and to expand seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// A single replica's random stream.  Streams are derived from (seed, path)
// so that every (alpha, replica) cell owns an independent generator whose
// output depends only on the derivation path, never on thread scheduling.
class RngStream {
 public:
  RngStream() : engine_(0) {}
  explicit RngStream(std::uint64_t stream_seed) : engine_(stream_seed) {}

  // split(seed, i, j, ...) -> deterministic substream seed.
  template <typename... Ids>
  static std::uint64_t derive(std::uint64_t seed, Ids... ids) {
    std::uint64_t s = seed;
    (void)splitmix64(s);
    ((s = splitmix64(s) ^ static_cast<std::uint64_t>(ids), (void)splitmix64(s)), ...);
    return splitmix64(s);
  }

  template <typename... Ids>
  static RngStream split(std::uint64_t seed, Ids... ids) {
    return RngStream(derive(seed, ids...));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform draw in the open interval (0,1); never returns an endpoint, so
  // it is safe to feed through log() in the Gaussian transform.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Box-Muller without the cached second value: every call consumes exactly
  // two uniforms, which keeps draw counts identical across code paths.
  double gauss() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  void fill_uniform(double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = uniform();
  }
  void fill_gauss(double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = gauss();
  }

 private:
  std::mt19937_64 engine_;
};

// One step's worth of primitive randomness.  Coupled chains are fed the same
// block so common-random-number coupling stays aligned even when a kernel
// consumes a different number of draws on accept vs. reject paths.
struct StepDraws {
  const double* uniform = nullptr;  // kernel uniforms
  const double* gauss = nullptr;    // kernel gaussians
  const double* noise = nullptr;    // additive-noise gaussians (d of them)
};

}  // namespace salab
