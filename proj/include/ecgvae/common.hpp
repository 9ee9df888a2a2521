#ifndef ECGVAE_COMMON_HPP
#define ECGVAE_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ecgvae {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A caller-supplied parameter is outside its documented domain.
/// The message names the offending field.
struct ParamError : Error {
    using Error::Error;
};

/// Malformed files, corrupted payloads, or data that cannot support the
/// requested operation (missing classes, wrong container kind, ...).
struct DataError : Error {
    using Error::Error;
};

/// Non-finite values encountered where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

/// A record failed quality control and is excluded from the dataset.
/// `reason` is a short machine-readable tag for the rejection report.
struct RecordRejected : Error {
    std::string reason;
    RecordRejected(std::string reason_, const std::string& msg)
        : Error(msg), reason(std::move(reason_)) {}
};

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent seeds from a
/// (base seed, index) pair without correlated streams.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

inline constexpr double kPi = 3.14159265358979323846;

} // namespace ecgvae

#endif
