#include "spanflow/featurize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>

#include "spanflow/common.hpp"

namespace spanflow::features {

using nlohmann::json;

bool is_mask_token(std::string_view s) {
  return std::find(kMaskTokens.begin(), kMaskTokens.end(), s) != kMaskTokens.end();
}

namespace {

enum class Kind { Currency, Percent, Quantity };

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool has_digit(std::string_view s) { return std::any_of(s.begin(), s.end(), is_digit); }

bool all_digits(std::string_view s) { return !s.empty() && std::all_of(s.begin(), s.end(), is_digit); }

std::string_view strip_punct(std::string_view s) {
  constexpr std::string_view kPunct = ".,;:!?()[]\"'";
  while (!s.empty() && kPunct.find(s.front()) != std::string_view::npos) s.remove_prefix(1);
  while (!s.empty() && kPunct.find(s.back()) != std::string_view::npos) s.remove_suffix(1);
  return s;
}

bool consume_prefix(std::string_view& s, std::string_view p) {
  if (s.substr(0, p.size()) != p) return false;
  s.remove_prefix(p.size());
  return true;
}

bool consume_suffix(std::string_view& s, std::string_view p) {
  if (s.size() < p.size() || s.substr(s.size() - p.size()) != p) return false;
  s.remove_suffix(p.size());
  return true;
}

constexpr std::array<std::string_view, 5> kCurrencySymbols = {"us$", "$", "\xe2\x82\xac", "\xc2\xa3",
                                                              "\xc2\xa5"};
constexpr std::array<std::string_view, 6> kCurrencyCodes = {"usd", "eur", "gbp", "chf", "jpy", "cad"};

bool is_currency_word(std::string_view w) {
  return std::find(kCurrencySymbols.begin(), kCurrencySymbols.end(), w) != kCurrencySymbols.end() ||
         std::find(kCurrencyCodes.begin(), kCurrencyCodes.end(), w) != kCurrencyCodes.end();
}

std::optional<double> scale_word(std::string_view w) {
  static const std::map<std::string_view, double> kScales = {
      {"k", 1e3},        {"thousand", 1e3}, {"thousands", 1e3}, {"m", 1e6},   {"mn", 1e6},
      {"mm", 1e6},       {"million", 1e6},  {"millions", 1e6},  {"bn", 1e9},  {"billion", 1e9},
      {"billions", 1e9}};
  auto it = kScales.find(w);
  if (it == kScales.end()) return std::nullopt;
  return it->second;
}

bool is_percent_word(std::string_view w) { return w == "%" || w == "percent" || w == "pct"; }

struct Number {
  double value = 0;  // absolute
  Kind kind = Kind::Quantity;
};

// Plain digits with optional thousands separators and decimals.
std::optional<double> parse_numeral(std::string_view s) {
  if (s.empty() || !is_digit(s.front())) return std::nullopt;
  std::string_view integral = s, fraction;
  if (auto dot = s.find('.'); dot != std::string_view::npos) {
    integral = s.substr(0, dot);
    fraction = s.substr(dot + 1);
    if (!all_digits(fraction)) return std::nullopt;
  }
  std::string digits;
  if (integral.find(',') != std::string_view::npos) {
    std::size_t first = integral.find(',');
    if (first == 0 || first > 3) return std::nullopt;
    for (std::size_t pos = first; pos < integral.size(); pos += 4) {
      if (integral[pos] != ',' || pos + 4 > integral.size()) return std::nullopt;
      if (!all_digits(integral.substr(pos + 1, 3))) return std::nullopt;
    }
    for (char c : integral)
      if (c != ',') digits += c;
    if (!all_digits(integral.substr(0, first))) return std::nullopt;
  } else {
    if (!all_digits(integral)) return std::nullopt;
    digits = std::string(integral);
  }
  double v = 0;
  for (char c : digits) v = v * 10 + (c - '0');
  double scale = 0.1;
  for (char c : fraction) {
    v += (c - '0') * scale;
    scale *= 0.1;
  }
  return v;
}

std::optional<Number> parse_number(std::string_view w) {
  Number n;
  std::string_view s = w;
  while (!s.empty() && (s.back() == ',' || s.back() == ';' || s.back() == ':' || s.back() == '.')) s.remove_suffix(1);
  if (consume_prefix(s, "(")) {
    if (!consume_suffix(s, ")")) return std::nullopt;
  }
  if (!consume_prefix(s, "-") && !consume_prefix(s, "+")) consume_prefix(s, "\xe2\x88\x92");
  for (auto sym : kCurrencySymbols)
    if (consume_prefix(s, sym)) {
      n.kind = Kind::Currency;
      break;
    }
  // Sign may also follow the symbol: $-4.5
  if (!consume_prefix(s, "-")) consume_prefix(s, "\xe2\x88\x92");
  if (consume_suffix(s, "%")) n.kind = Kind::Percent;
  double scale = 1;
  if (n.kind != Kind::Percent) {
    for (auto [suffix, mult] : std::array<std::pair<std::string_view, double>, 4>{
             {{"bn", 1e9}, {"mn", 1e6}, {"m", 1e6}, {"k", 1e3}}})
      if (consume_suffix(s, suffix)) {
        scale = mult;
        break;
      }
  }
  auto v = parse_numeral(s);
  if (!v) return std::nullopt;
  n.value = std::abs(*v) * scale;
  return n;
}

std::string magnitude_token(double v) {
  if (v < 100) return "<num_tens>";
  if (v < 1000) return "<num_hundreds>";
  if (v < 1e6) return "<num_thousands>";
  return "<num_millions>";
}

std::string magnitude_by_digits(std::string_view s) {
  const auto digits = std::count_if(s.begin(), s.end(), is_digit);
  if (digits <= 2) return "<num_tens>";
  if (digits == 3) return "<num_hundreds>";
  if (digits <= 6) return "<num_thousands>";
  return "<num_millions>";
}

const char* kind_token(Kind k) {
  switch (k) {
    case Kind::Currency: return "<currency>";
    case Kind::Percent: return "<percent>";
    case Kind::Quantity: return "<quantity>";
  }
  return "<quantity>";
}

bool is_month(std::string_view w) {
  static constexpr std::array<std::string_view, 24> kMonths = {
      "january", "february", "march", "april",  "may",  "june", "july", "august",
      "september", "october", "november", "december", "jan.", "feb.", "mar.", "apr.",
      "jun.",    "jul.",     "aug.",  "sep.", "sept.", "oct.", "nov.", "dec."};
  return std::find(kMonths.begin(), kMonths.end(), w) != kMonths.end();
}

bool is_year(std::string_view w) {
  if (w.size() == 6 && w.substr(0, 2) == "fy" && all_digits(w.substr(2))) return true;
  if (w.size() == 4 && w.substr(0, 2) == "fy" && all_digits(w.substr(2))) return true;
  if (w.size() != 4 || !all_digits(w)) return false;
  return w.substr(0, 2) == "19" || w.substr(0, 2) == "20";
}

bool is_quarter(std::string_view w) {
  if (w.size() != 2) return false;
  return (w[0] == 'q' && w[1] >= '1' && w[1] <= '4') || (w[1] == 'q' && w[0] >= '1' && w[0] <= '4');
}

bool is_day(std::string_view w) {
  std::string_view s = w;
  for (auto suf : {"st", "nd", "rd", "th"})
    if (consume_suffix(s, suf)) break;
  if (s.empty() || s.size() > 2 || !all_digits(s)) return false;
  const int d = std::stoi(std::string(s));
  return d >= 1 && d <= 31;
}

bool is_iso_date(std::string_view w) {
  return w.size() == 10 && all_digits(w.substr(0, 4)) && w[4] == '-' && all_digits(w.substr(5, 2)) &&
         w[7] == '-' && all_digits(w.substr(8, 2));
}

std::vector<std::string> split_ws(std::string_view raw) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    std::size_t j = i;
    while (j < raw.size() && !std::isspace(static_cast<unsigned char>(raw[j]))) ++j;
    if (j > i) words.emplace_back(raw.substr(i, j - i));
    i = j;
  }
  return words;
}

}  // namespace

std::vector<std::string> mask_token(std::string_view raw) {
  const auto words = split_ws(raw);
  std::vector<std::string> out;
  auto next_word = [&](std::size_t i) -> std::string {
    return i + 1 < words.size() ? lower(strip_punct(words[i + 1])) : std::string();
  };

  for (std::size_t i = 0; i < words.size(); ++i) {
    if (is_mask_token(words[i])) {
      out.push_back(words[i]);
      continue;
    }
    const std::string w = lower(words[i]);
    const std::string core(strip_punct(w));
    const bool after_month = !out.empty() && out.back() == "<month>";

    if (is_iso_date(core)) {
      out.insert(out.end(), {"<year>", "<month>", "<day>"});
      continue;
    }
    if (is_quarter(core)) {
      out.push_back("<quarter>");
      continue;
    }
    if (is_month(core) || is_month(w)) {
      // "may" is only a month when a day or year follows.
      const std::string nw = next_word(i);
      if (core != "may" || is_day(nw) || is_year(nw)) {
        out.push_back("<month>");
        continue;
      }
    }
    if (after_month && is_day(core)) {
      out.push_back("<day>");
      continue;
    }
    if (is_year(core)) {
      out.push_back("<year>");
      continue;
    }

    std::optional<Number> num;
    std::size_t consumed = i;
    if (is_currency_word(core) && i + 1 < words.size()) {
      if ((num = parse_number(lower(words[i + 1])))) {
        num->kind = Kind::Currency;
        consumed = i + 1;
      }
    }
    if (!num && (num = parse_number(w))) consumed = i;
    if (num) {
      // Detached scale, percent or currency markers that follow the numeral.
      for (int k = 0; k < 2 && consumed + 1 < words.size(); ++k) {
        const std::string nw = lower(strip_punct(words[consumed + 1]));
        const std::string nw_raw = lower(words[consumed + 1]);
        if (auto sc = scale_word(nw)) {
          num->value *= *sc;
        } else if (is_percent_word(nw_raw) || is_percent_word(nw)) {
          num->kind = Kind::Percent;
        } else if (is_currency_word(nw)) {
          num->kind = Kind::Currency;
        } else {
          break;
        }
        ++consumed;
      }
      out.push_back(magnitude_token(num->value));
      out.push_back(kind_token(num->kind));
      i = consumed;
      continue;
    }
    if (has_digit(w)) {
      out.push_back(magnitude_by_digits(w));
      out.push_back("<quantity>");
      continue;
    }
    out.push_back(core.empty() ? w : core);
  }
  return out;
}

Vocab::Vocab(std::vector<std::string> tokens, int buckets, int dim)
    : tokens_(std::move(tokens)), buckets_(buckets), dim_(dim) {
  if (buckets_ < 1) throw ValidationError("vocab needs at least one hash bucket");
  if (dim_ < 1) throw ValidationError("embedding dimension must be positive");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw ValidationError("duplicate vocab token '" + tokens_[i] + "'");
  }
  for (auto m : kMaskTokens)
    if (!index_.count(std::string(m))) throw ValidationError("vocab is missing mask token " + std::string(m));
}

int Vocab::lookup(const std::string& token) const {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  return size() + static_cast<int>(fnv1a64(token) % static_cast<std::uint64_t>(buckets_));
}

json Vocab::to_json() const { return {{"tokens", tokens_}, {"buckets", buckets_}, {"d", dim_}}; }

Vocab Vocab::from_json(const json& j) {
  try {
    return Vocab(j.at("tokens").get<std::vector<std::string>>(), j.at("buckets").get<int>(), j.at("d").get<int>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed vocab: ") + e.what());
  }
}

Vocab build_vocab(const std::vector<layout::Span>& corpus, int min_count, int buckets, int dim) {
  if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
  std::map<std::string, int> counts;
  for (auto m : kMaskTokens) counts[std::string(m)] += 0;
  for (const auto& span : corpus)
    for (auto& t : mask_token(span.text())) ++counts[t];

  std::vector<std::pair<std::string, int>> kept;
  for (auto& [tok, c] : counts)
    if (c >= min_count || is_mask_token(tok)) kept.emplace_back(tok, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, c] : kept) tokens.push_back(tok);
  return Vocab(std::move(tokens), buckets, dim);
}

EmbeddingTable init_embedding_table(const Vocab& vocab, std::uint64_t seed) {
  Rng rng(seed);
  const double a = std::sqrt(3.0 / vocab.dim());  // unit expected row norm
  EmbeddingTable t{Eigen::MatrixXd(vocab.rows(), vocab.dim())};
  for (int r = 0; r < t.weights.rows(); ++r)
    for (int c = 0; c < t.weights.cols(); ++c) t.weights(r, c) = rng.uniform(-a, a);
  return t;
}

std::vector<int> span_rows(const layout::Span& span, const Vocab& vocab) {
  std::vector<int> rows;
  for (const auto& t : mask_token(span.text())) rows.push_back(vocab.lookup(t));
  return rows;
}

Eigen::VectorXd embed_rows(const std::vector<int>& rows, const EmbeddingTable& table) {
  if (rows.empty()) throw ValidationError("cannot embed a span with no tokens");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(table.weights.cols());
  for (int r : rows) v += table.weights.row(r).transpose();
  return v / static_cast<double>(rows.size());
}

Eigen::VectorXd embed_span(const layout::Span& span, const Vocab& vocab, const EmbeddingTable& table) {
  if (table.weights.rows() != vocab.rows() || table.weights.cols() != vocab.dim())
    throw ValidationError("embedding table shape does not match vocab");
  return embed_rows(span_rows(span, vocab), table);
}

void accumulate_rows_grad(const std::vector<int>& rows, const Eigen::Ref<const Eigen::VectorXd>& grad,
                          Eigen::MatrixXd& table_grad) {
  if (rows.empty()) return;
  const double w = 1.0 / static_cast<double>(rows.size());
  for (int r : rows) table_grad.row(r) += w * grad.transpose();
}

}  // namespace spanflow::features
