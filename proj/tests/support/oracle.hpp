#pragma once

// Test-only reference computations. They deliberately share no code with the
// library: hashing, tokenization and the perplexity formula are re-derived
// here from their definitions.

#include <openssl/sha.h>

#include <cmath>
#include <cstdint>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

namespace oracle {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string sha256_hex(std::string_view s) {
  unsigned char md[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(s.data()), s.size(), md);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char b : md) {
    out += hex[b >> 4];
    out += hex[b & 15];
  }
  return out;
}

/// Whitespace-led tokens; trailing whitespace sticks to the last token.
inline std::vector<std::string> tokens(const std::string& text) {
  static const std::regex re(R"(\s*\S+)");
  std::vector<std::string> out;
  std::size_t end = 0;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
    out.push_back(it->str());
    end = static_cast<std::size_t>(it->position() + it->length());
  }
  if (!out.empty()) out.back() += text.substr(end);
  else if (!text.empty()) out.push_back(text);
  return out;
}

inline double logprob(std::uint64_t seed, const std::string& context, const std::string& token, std::size_t j) {
  const std::string key =
      std::to_string(seed) + '\x1f' + sha256_hex(context) + '\x1f' + token + '\x1f' + std::to_string(j);
  const double frac = static_cast<double>(fnv1a64(key) % 1000) / 1000.0;
  return -(1.0 + frac) * std::log(2.0);
}

/// exp of the negative mean, accumulated in long double.
inline double perplexity(const std::vector<double>& lp) {
  long double sum = 0;
  for (double v : lp) sum += v;
  return static_cast<double>(std::exp(-sum / static_cast<long double>(lp.size())));
}

inline double deterministic_perplexity(std::uint64_t seed, const std::string& context,
                                       const std::string& continuation) {
  const auto toks = tokens(continuation);
  std::vector<double> lp;
  for (std::size_t j = 0; j < toks.size(); ++j) lp.push_back(logprob(seed, context, toks[j], j));
  return perplexity(lp);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace oracle
