#include "ppr/util.hpp"

#include <fstream>
#include <sstream>

#include "ppr/error.hpp"

namespace ppr {

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stable_hash(std::initializer_list<std::string_view> parts, std::uint64_t seed) {
  std::uint64_t h = mix64(seed);
  for (auto part : parts) {
    // Length prefix keeps ("ab","c") and ("a","bc") apart.
    h = mix64(h ^ fnv1a64(part) ^ (static_cast<std::uint64_t>(part.size()) << 1));
  }
  return h;
}

std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  if (bound == 0) return 0;
  // Reject the low (2^64 mod bound) values so every residue is equally likely.
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    std::uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  if (count > n) count = n;
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

namespace {

// Length in bytes of a Unicode space sequence starting at s[i], or 0.
std::size_t space_len(std::string_view s, std::size_t i) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') return 1;
  if (c == 0xC2 && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0xA0) return 2;
  if (c == 0xE3 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
      static_cast<unsigned char>(s[i + 2]) == 0x80)
    return 3;
  if (c == 0xE2 && i + 2 < s.size()) {
    unsigned char c1 = static_cast<unsigned char>(s[i + 1]);
    unsigned char c2 = static_cast<unsigned char>(s[i + 2]);
    // U+2000..U+200A, U+2028, U+2029, U+202F, U+205F
    if (c1 == 0x80 && (c2 <= 0x8A || c2 == 0xA8 || c2 == 0xA9 || c2 == 0xAF)) return 3;
    if (c1 == 0x81 && c2 == 0x9F) return 3;
  }
  return 0;
}

}  // namespace

std::string trim(std::string_view s) {
  std::size_t b = 0;
  while (b < s.size()) {
    std::size_t n = space_len(s, b);
    if (n == 0) break;
    b += n;
  }
  std::size_t e = s.size();
  while (e > b) {
    // Walk back over trailing spaces; check the 1-3 byte candidates ending at e.
    bool stripped = false;
    for (std::size_t n = 1; n <= 3 && n <= e - b; ++n) {
      if (space_len(s, e - n) == n) {
        e -= n;
        stripped = true;
        break;
      }
    }
    if (!stripped) break;
  }
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t n = space_len(s, i);
    if (n > 0) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      i += n;
    } else {
      cur.push_back(s[i]);
      ++i;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::size_t word_count(std::string_view s) { return split_whitespace(s).size(); }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed: " + path);
}

}  // namespace ppr
