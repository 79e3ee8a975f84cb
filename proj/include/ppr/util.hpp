#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ppr {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// splitmix64 finalizer; a good bijective bit mixer.
std::uint64_t mix64(std::uint64_t x);

/// Combines several string parts into one stable 64-bit key.
std::uint64_t stable_hash(std::initializer_list<std::string_view> parts, std::uint64_t seed = 0);

/// Deterministic across standard libraries (unlike std::uniform_int_distribution).
using Rng = std::mt19937_64;

std::uint64_t uniform_below(Rng& rng, std::uint64_t bound);

/// Uniformly samples `count` distinct indices from [0, n) in draw order.
std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n, std::size_t count);

std::string hex64(std::uint64_t v);

std::string trim(std::string_view s);

/// Whitespace split on ASCII and common Unicode spaces.
std::vector<std::string> split_whitespace(std::string_view s);

std::size_t word_count(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace ppr
