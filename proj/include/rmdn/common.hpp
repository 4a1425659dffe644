#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmdn {

// Raised when a computation leaves the representable/accurate regime
// (non-finite loss, quadrature that cannot reach its target accuracy, ...).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised on bad magic bytes, CRC mismatch or truncated binary files.
struct CorruptFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised on malformed text inputs (CSV, JSON manifests).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic splitmix64 generator. Used everywhere randomness is needed
// so that results are reproducible bit-for-bit across platforms; the
// standard <random> distributions are implementation-defined and are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // uniform integer in [0, n), rejection sampled
  std::uint64_t next_below(std::uint64_t n);

  // standard normal via Box-Muller
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Independent stream keyed by (seed, name); adding new names never perturbs
// existing streams.
Rng named_stream(std::uint64_t seed, const std::string& name);

std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64(const std::string& s);

double digamma(double x);

// Little-endian binary encoding helpers.
void append_u32(std::string& buf, std::uint32_t v);
void append_u64(std::string& buf, std::uint64_t v);
void append_f64(std::string& buf, double v);

// Bounds-checked readers; advance `pos`, throw CorruptFileError on overrun.
std::uint32_t read_u32(const std::string& buf, std::size_t& pos);
std::uint64_t read_u64(const std::string& buf, std::size_t& pos);
double read_f64(const std::string& buf, std::size_t& pos);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

// Formats a double with 17 significant digits (lossless round trip).
std::string format_full(double v);

}  // namespace rmdn
