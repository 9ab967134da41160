#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace doccog {

// Answer normalization, applied identically to prediction and reference:
//   1. ASCII letters are lower-cased (other bytes pass through unchanged);
//   2. ASCII punctuation (std::ispunct in the "C" locale) is deleted;
//   3. runs of ASCII whitespace collapse to one space; ends are trimmed.
inline std::string normalize_answer(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (c < 0x80 && std::ispunct(c)) continue;
    if (c < 0x80 && std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
  }
  return out;
}

inline std::vector<std::string> answer_tokens(std::string_view s) {
  const std::string norm = normalize_answer(s);
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < norm.size()) {
    std::size_t end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    tokens.push_back(norm.substr(start, end - start));
    start = end + 1;
  }
  return tokens;
}

struct TokenOverlap {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Multiset token overlap. Two empty token lists match perfectly; one
/// empty side scores zero.
inline TokenOverlap token_overlap(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return {1.0, 1.0, 1.0};
  if (pred.empty() || gold.empty()) return {};
  std::map<std::string, std::size_t> gold_counts;
  for (const auto& t : gold) ++gold_counts[t];
  std::size_t common = 0;
  for (const auto& t : pred) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return {};
  TokenOverlap o;
  o.precision = static_cast<double>(common) / static_cast<double>(pred.size());
  o.recall = static_cast<double>(common) / static_cast<double>(gold.size());
  // Same value as 2PR/(P+R), rounded once, so F1 = 4/5 compares equal to 0.8.
  o.f1 = 2.0 * static_cast<double>(common) / static_cast<double>(pred.size() + gold.size());
  return o;
}

inline TokenOverlap token_overlap(std::string_view pred, std::string_view gold) {
  return token_overlap(answer_tokens(pred), answer_tokens(gold));
}

inline double token_f1(std::string_view pred, std::string_view gold) { return token_overlap(pred, gold).f1; }

/// Decodes UTF-8 into code points; malformed bytes are taken one by one.
inline std::u32string utf8_codepoints(std::string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
    if (i + len > s.size()) len = 1;
    char32_t cp = len == 1 ? c : (c & (0xFF >> (len + 1)));
    bool valid = true;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) valid = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!valid) {
      len = 1;
      cp = c;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

/// Levenshtein distance over code points (unit insert/delete/substitute).
inline std::size_t edit_distance(std::u32string_view a, std::u32string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

/// 1 - edit_distance / max_length on normalized strings; 1 when both are empty.
inline double fuzzy_similarity(std::string_view pred, std::string_view gold) {
  const auto a = utf8_codepoints(normalize_answer(pred));
  const auto b = utf8_codepoints(normalize_answer(gold));
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(edit_distance(a, b)) / static_cast<double>(longest);
}

}  // namespace doccog
