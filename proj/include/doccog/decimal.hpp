#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "doccog/error.hpp"

namespace doccog {

// Exact base-10 number: value = mantissa * 10^-scale.
// Plain decimal strings parse and render without any binary rounding,
// so "120" renders as "120" and 0.1 + 0.2 is exactly 0.3.
class Decimal {
 public:
  static constexpr int kMaxScale = 18;

  Decimal() = default;
  Decimal(std::int64_t mantissa, int scale) : mantissa_(mantissa), scale_(scale) {
    normalize();
  }

  static Decimal from_int(std::int64_t v) { return Decimal(v, 0); }

  std::int64_t mantissa() const { return mantissa_; }
  int scale() const { return scale_; }

  double to_double() const {
    double v = static_cast<double>(mantissa_);
    for (int i = 0; i < scale_; ++i) v /= 10.0;
    return v;
  }

  /// Canonical rendering: no exponent, no trailing fractional zeros.
  std::string to_string() const {
    __int128 magnitude = mantissa_;
    if (magnitude < 0) magnitude = -magnitude;
    std::string digits;
    do {
      digits.insert(digits.begin(), static_cast<char>('0' + static_cast<int>(magnitude % 10)));
      magnitude /= 10;
    } while (magnitude > 0);
    if (scale_ > 0) {
      if (static_cast<int>(digits.size()) <= scale_) {
        digits.insert(0, static_cast<std::size_t>(scale_ + 1 - static_cast<int>(digits.size())), '0');
      }
      digits.insert(digits.size() - static_cast<std::size_t>(scale_), 1, '.');
    }
    return mantissa_ < 0 ? "-" + digits : digits;
  }

  friend bool operator==(const Decimal& a, const Decimal& b) {
    return a.mantissa_ == b.mantissa_ && a.scale_ == b.scale_;
  }

  friend std::strong_ordering operator<=>(const Decimal& a, const Decimal& b) {
    const int s = a.scale_ > b.scale_ ? a.scale_ : b.scale_;
    const __int128 x = widen(a.mantissa_, s - a.scale_);
    const __int128 y = widen(b.mantissa_, s - b.scale_);
    return x < y ? std::strong_ordering::less
                 : (x > y ? std::strong_ordering::greater : std::strong_ordering::equal);
  }

  /// Throws E_NUMERIC_OVERFLOW when the exact result does not fit.
  friend Decimal operator+(const Decimal& a, const Decimal& b) {
    const int s = a.scale_ > b.scale_ ? a.scale_ : b.scale_;
    const __int128 sum = widen(a.mantissa_, s - a.scale_) + widen(b.mantissa_, s - b.scale_);
    if (sum > INT64_MAX || sum < INT64_MIN) {
      throw Error("E_NUMERIC_OVERFLOW", "decimal sum does not fit in 64 bits");
    }
    return Decimal(static_cast<std::int64_t>(sum), s);
  }

 private:
  static __int128 widen(std::int64_t m, int places) {
    __int128 v = m;
    for (int i = 0; i < places; ++i) v *= 10;
    return v;
  }

  void normalize() {
    while (scale_ > 0 && mantissa_ % 10 == 0) {
      mantissa_ /= 10;
      --scale_;
    }
  }

  std::int64_t mantissa_ = 0;
  int scale_ = 0;
};

namespace detail {

inline bool is_currency_prefix(std::string_view s, std::size_t i, std::size_t& len) {
  static constexpr std::string_view kSymbols[] = {"$", "\xE2\x82\xAC" /* € */, "\xC2\xA3" /* £ */,
                                                  "\xC2\xA5" /* ¥ */};
  for (auto sym : kSymbols) {
    if (s.substr(i, sym.size()) == sym) {
      len = sym.size();
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Lenient numeric reading used by the executor: currency symbols,
/// thousands separators and '%' are dropped, surrounding whitespace is
/// ignored, and what remains must be [+-]digits[.digits].
inline std::optional<Decimal> parse_decimal(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    std::size_t len = 0;
    if (detail::is_currency_prefix(text, i, len)) {
      i += len;
      continue;
    }
    const char c = text[i];
    if (c != ',' && c != '%' && c != ' ' && c != '\t') cleaned.push_back(c);
    ++i;
  }
  if (cleaned.empty()) return std::nullopt;

  std::size_t pos = 0;
  bool negative = false;
  if (cleaned[0] == '+' || cleaned[0] == '-') {
    negative = cleaned[0] == '-';
    ++pos;
  }
  __int128 mantissa = 0;
  int scale = 0;
  int significant = 0;
  bool int_digit = false;
  bool frac_digit = false;
  bool seen_point = false;
  for (; pos < cleaned.size(); ++pos) {
    const char c = cleaned[pos];
    if (c == '.') {
      if (seen_point || !int_digit) return std::nullopt;
      seen_point = true;
      continue;
    }
    if (c < '0' || c > '9') return std::nullopt;
    (seen_point ? frac_digit : int_digit) = true;
    mantissa = mantissa * 10 + (c - '0');
    if (mantissa != 0 && ++significant > 18) return std::nullopt;
    if (seen_point && ++scale > Decimal::kMaxScale) return std::nullopt;
  }
  if (!int_digit || (seen_point && !frac_digit)) return std::nullopt;
  const auto m = static_cast<std::int64_t>(negative ? -mantissa : mantissa);
  return Decimal(m, scale);
}

}  // namespace doccog
