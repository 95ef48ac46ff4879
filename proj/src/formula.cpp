#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>

#include <fmt/format.h>

#include "dive/composition.hpp"
#include "dive/elements.hpp"
#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

Composition::Composition(std::map<std::string, double, std::less<>> amounts) : amounts_(std::move(amounts)) {
  const auto& table = ElementTable::instance();
  for (const auto& [sym, amt] : amounts_) {
    if (table.find(sym) == nullptr) {
      throw Error(ErrorCode::UnknownElement, "unknown element '" + sym + "'", {{"element", sym}});
    }
    if (!(amt > 0.0) || !std::isfinite(amt)) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("amount of {} must be positive, got {}", sym, amt));
    }
  }
}

double Composition::total() const {
  double t = 0.0;
  for (const auto& [_, a] : amounts_) t += a;
  return t;
}

double Composition::amount(std::string_view symbol) const {
  auto it = amounts_.find(symbol);
  return it == amounts_.end() ? 0.0 : it->second;
}

std::vector<std::string> Composition::elements() const {
  std::vector<std::string> out;
  out.reserve(amounts_.size());
  for (const auto& [s, _] : amounts_) out.push_back(s);
  return out;
}

Composition Composition::scaled(double k) const {
  if (!(k > 0.0)) throw Error(ErrorCode::InvalidArgument, "scale factor must be positive");
  auto copy = amounts_;
  for (auto& [_, a] : copy) a *= k;
  return Composition(std::move(copy));
}

std::map<std::string, double, std::less<>> Composition::fractions() const {
  std::map<std::string, double, std::less<>> out;
  if (amounts_.empty()) return out;
  double largest = 0.0;
  for (const auto& [_, a] : amounts_) largest = std::max(largest, a);
  double sum = 0.0;
  for (const auto& [s, a] : amounts_) {
    double ratio = a / largest;
    double q = std::nearbyint(ratio * 1e9) / 1e9;
    if (q == 0.0) q = ratio;
    out[s] = q;
    sum += q;
  }
  for (auto& [_, f] : out) f /= sum;
  return out;
}

namespace {

class FormulaParser {
 public:
  explicit FormulaParser(std::string_view s) : s_(s) {}

  Composition parse() {
    skip_separators();
    if (pos_ >= s_.size()) throw Error(ErrorCode::EmptyFormula, "empty formula");
    if (peek_digit()) syntax("leading coefficient is not supported");
    auto amounts = parse_sequence(std::nullopt);
    if (amounts.empty()) throw Error(ErrorCode::EmptyFormula, "formula contains no elements");
    return Composition(std::move(amounts));
  }

 private:
  using Amounts = std::map<std::string, double, std::less<>>;

  [[noreturn]] void syntax(const std::string& what) const {
    throw Error(ErrorCode::SyntaxError, fmt::format("{} at byte {} in '{}'", what, pos_, s_), {{"offset", pos_}});
  }

  // Sequence of terms until end of input or the closing bracket `close`.
  Amounts parse_sequence(std::optional<char> close) {
    Amounts acc;
    while (true) {
      skip_separators();
      if (pos_ >= s_.size()) {
        if (close) {
          throw Error(ErrorCode::UnbalancedGroup, fmt::format("missing '{}' in '{}'", *close, s_),
                      {{"offset", pos_}});
        }
        return acc;
      }
      char c = s_[pos_];
      if (c == ')' || c == ']') {
        if (!close) {
          throw Error(ErrorCode::UnbalancedGroup, fmt::format("unmatched '{}' at byte {}", c, pos_),
                      {{"offset", pos_}});
        }
        if (c != *close) {
          throw Error(ErrorCode::UnbalancedGroup,
                      fmt::format("expected '{}' but found '{}' at byte {}", *close, c, pos_), {{"offset", pos_}});
        }
        ++pos_;
        return acc;
      }
      if (c == '(' || c == '[') {
        std::size_t open_at = pos_;
        ++pos_;
        Amounts inner = parse_sequence(c == '(' ? ')' : ']');
        if (inner.empty()) {
          pos_ = open_at;
          syntax("empty group");
        }
        double mult = parse_number().value_or(1.0);
        for (const auto& [sym, a] : inner) acc[sym] += a * mult;
        continue;
      }
      if (c >= 'A' && c <= 'Z') {
        std::size_t at = pos_;
        std::string sym(1, c);
        ++pos_;
        if (pos_ < s_.size() && s_[pos_] >= 'a' && s_[pos_] <= 'z') sym.push_back(s_[pos_++]);
        if (pos_ < s_.size() && s_[pos_] >= 'a' && s_[pos_] <= 'z') {
          syntax("element symbol too long");
        }
        if (ElementTable::instance().find(sym) == nullptr) {
          throw Error(ErrorCode::UnknownElement, fmt::format("unknown element '{}' at byte {}", sym, at),
                      {{"element", sym}, {"offset", at}});
        }
        acc[sym] += parse_number().value_or(1.0);
        continue;
      }
      if (peek_digit()) syntax("unexpected number");
      syntax(fmt::format("unexpected character '{}'", c));
    }
  }

  // ASCII digit or Unicode subscript digit (U+2080..U+2089); returns its value.
  std::optional<int> digit_at(std::size_t p, std::size_t* width) const {
    if (p < s_.size() && s_[p] >= '0' && s_[p] <= '9') {
      *width = 1;
      return s_[p] - '0';
    }
    if (p + 2 < s_.size() && static_cast<unsigned char>(s_[p]) == 0xE2 &&
        static_cast<unsigned char>(s_[p + 1]) == 0x82) {
      auto b = static_cast<unsigned char>(s_[p + 2]);
      if (b >= 0x80 && b <= 0x89) {
        *width = 3;
        return b - 0x80;
      }
    }
    return std::nullopt;
  }

  bool peek_digit() const {
    std::size_t w = 0;
    return digit_at(pos_, &w).has_value();
  }

  std::optional<double> parse_number() {
    std::string text;
    std::size_t w = 0;
    std::size_t start = pos_;
    while (auto d = digit_at(pos_, &w)) {
      text.push_back(static_cast<char>('0' + *d));
      pos_ += w;
    }
    if (pos_ < s_.size() && s_[pos_] == '.' && !text.empty()) {
      std::size_t save = pos_;
      ++pos_;
      std::string frac;
      while (auto d = digit_at(pos_, &w)) {
        frac.push_back(static_cast<char>('0' + *d));
        pos_ += w;
      }
      if (frac.empty()) {
        pos_ = save;
        syntax("dangling decimal point");
      }
      text += "." + frac;
    }
    if (text.empty()) return std::nullopt;
    double v = std::strtod(text.c_str(), nullptr);
    if (v == 0.0) {
      pos_ = start;
      syntax("zero amount");
    }
    return v;
  }

  // Whitespace and interpuncts are ignored; an interpunct followed by a number
  // is a hydrate coefficient, which is unsupported.
  void skip_separators() {
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos_;
        continue;
      }
      std::size_t w = interpunct_width(pos_);
      if (w == 0) return;
      std::size_t after = pos_ + w;
      while (after < s_.size() && (s_[after] == ' ' || s_[after] == '\t')) ++after;
      std::size_t dw = 0;
      if (digit_at(after, &dw)) syntax("hydrate notation is not supported");
      pos_ += w;
    }
  }

  std::size_t interpunct_width(std::size_t p) const {
    auto at = [&](std::size_t i) { return i < s_.size() ? static_cast<unsigned char>(s_[i]) : 0u; };
    if (at(p) == 0xC2 && at(p + 1) == 0xB7) return 2;                       // U+00B7 middle dot
    if (at(p) == 0xE2 && at(p + 1) == 0x8B && at(p + 2) == 0x85) return 3;  // U+22C5 dot operator
    if (at(p) == 0xE2 && at(p + 1) == 0x80 && at(p + 2) == 0xA2) return 3;  // U+2022 bullet
    return 0;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

Composition parse_formula(std::string_view s) { return FormulaParser(s).parse(); }

std::string canonical_formula(const Composition& c) {
  if (c.empty()) return {};
  double smallest = c.amounts().begin()->second;
  for (const auto& [_, a] : c.amounts()) smallest = std::min(smallest, a);
  std::string out;
  for (const auto& [sym, a] : c.amounts()) {
    out += sym;
    // snap float noise first so exact halves round the same way after scaling
    out += format_trimmed(round_sig(a / smallest, 12), 4);
  }
  return out;
}

std::string format_formula(const Composition& c) {
  std::string out;
  for (const auto& [sym, a] : c.amounts()) {
    out += sym;
    if (a != 1.0) {
      char buf[400];
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, a, std::chars_format::fixed);
      out.append(buf, end);
    }
  }
  return out;
}

}  // namespace dive
