#include "spanflow/synthdoc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unistd.h>

#include "spanflow/common.hpp"

namespace spanflow::synth {

using layout::BBox;
using layout::Span;
using layout::Token;
using nlohmann::json;

namespace {

constexpr double kCharWidth = 6;
constexpr double kTokenHeight = 10;
constexpr double kWordGap = 4;
constexpr double kMarginX = 60;
constexpr double kMarginTop = 60;
constexpr double kMarginBottom = 60;
constexpr double kMaxPitch = 26;
constexpr int kFixedLines = 8;  // title, header and distractor slots

const std::vector<std::string> kRegions = {"north america", "europe", "asia pacific", "latin america",
                                           "middle east",   "africa", "nordics",      "central asia"};
const std::vector<std::string> kProse = {
    "the",       "company", "results",  "period",     "growth",   "market",   "demand",      "segment",
    "quarter",   "strong",  "margin",   "pricing",    "customers", "product", "investment",  "operations",
    "compared",  "with",    "prior",    "year",       "reflecting", "higher", "lower",       "volumes",
    "benefit",   "impact",  "management", "expects",  "outlook",  "remains",  "stable",      "across",
    "regions",   "and",     "of",       "continued",  "driven",   "by",       "improved",    "mix"};
const std::vector<std::string> kTitles = {"consolidated statement of operations", "selected financial data",
                                          "segment information",                  "key performance indicators",
                                          "summary of results",                   "financial highlights"};
const std::vector<std::string> kPhrases = {"{} amounted to", "we reported {} of", "{} for the period was",
                                           "{} reached", "the company recorded {} of"};

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = s.find(' ', i);
    if (j == std::string::npos) j = s.size();
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

double text_width(const std::vector<std::string>& words) {
  double w = 0;
  for (std::size_t i = 0; i < words.size(); ++i) w += words[i].size() * kCharWidth + (i ? kWordGap : 0);
  return w;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

// Accumulates lines top to bottom and spans left to right, so span ids are
// the reading order by construction.
class PageBuilder {
 public:
  PageBuilder(std::string page_id, Layout layout) {
    page_.page_id = std::move(page_id);
    page_.layout = layout;
  }

  void new_line(double y) {
    if (y <= last_y_) throw ComputeError("page builder: lines must move down the page");
    if (y + kTokenHeight > kCanvasHeight - kMarginBottom / 2)
      throw ValidationError("page content does not fit the canvas");
    last_y_ = y;
    line_x1_ = -1;
  }

  int add_span(const std::vector<std::string>& words, double x0) {
    if (x0 <= line_x1_) throw ComputeError("page builder: spans overlap on a line");
    Span s;
    s.span_id = static_cast<int>(page_.spans.size());
    double x = x0;
    for (const auto& w : words) {
      const double x1 = x + w.size() * kCharWidth;
      Token t{w, BBox{x, last_y_, x1, last_y_ + kTokenHeight}, page_.page_id};
      s.tokens.push_back(t);
      page_.tokens.push_back(std::move(t));
      x = x1 + kWordGap;
    }
    s.bbox = s.tokens.front().bbox;
    for (const auto& t : s.tokens) s.bbox = s.bbox.united(t.bbox);
    if (s.bbox.x1 > kCanvasWidth - 10) throw ValidationError("page content does not fit the canvas width");
    line_x1_ = s.bbox.x1;
    page_.spans.push_back(std::move(s));
    return page_.spans.back().span_id;
  }

  int add_text(const std::string& text, double x0) { return add_span(split_words(text), x0); }

  double y() const { return last_y_; }
  GeneratedPage finish() { return std::move(page_); }

 private:
  GeneratedPage page_;
  double last_y_ = -1;
  double line_x1_ = -1;
};

enum class ValueKind { CurrencyMillions, CurrencyThousands, Percent, Units };

ValueKind kind_of(const std::string& label) { return static_cast<ValueKind>(fnv1a64(label) % 4); }

std::string with_commas(long v) {
  std::string s = std::to_string(v), out;
  int n = 0;
  for (auto it = s.rbegin(); it != s.rend(); ++it) {
    if (n && n % 3 == 0) out.push_back(',');
    out.push_back(*it);
    ++n;
  }
  return {out.rbegin(), out.rend()};
}

double base_value(ValueKind k, Rng& rng) {
  switch (k) {
    case ValueKind::CurrencyMillions: return rng.uniform(2.0, 90.0);
    case ValueKind::CurrencyThousands: return rng.uniform(120.0, 880.0);
    case ValueKind::Percent: return rng.uniform(2.0, 85.0);
    case ValueKind::Units: return rng.uniform(1200.0, 88000.0);
  }
  return 1.0;
}

std::vector<std::string> make_value(ValueKind k, double v) {
  char buf[32];
  switch (k) {
    case ValueKind::CurrencyMillions:
      std::snprintf(buf, sizeof buf, "$%.1f", v);
      return {buf, "m"};
    case ValueKind::CurrencyThousands:
      return {"$" + std::to_string(std::lround(v)), "k"};
    case ValueKind::Percent:
      std::snprintf(buf, sizeof buf, "%.1f", v);
      return {buf, "%"};
    case ValueKind::Units:
      return {with_commas(std::lround(v)), "units"};
  }
  return {"0", "units"};
}

struct Section {
  std::string heading;                                   // empty for unsectioned tables
  std::vector<std::string> labels;                       // page-1 row order
  std::vector<std::vector<std::vector<std::string>>> values;  // [row][col] words
};

struct Facts {
  std::vector<Section> sections;
  int columns = 0;
  int first_year = 2018;
  std::string title;
};

Facts draw_facts(const CorpusSpec& spec, Rng& rng) {
  const auto& vocab = spec.vocabulary.empty() ? default_vocabulary() : spec.vocabulary;
  Facts f;
  f.columns = rng.range(spec.cols_min, spec.cols_max);
  f.first_year = rng.range(2012, 2020);
  f.title = pick(kTitles, rng);
  const int rows = rng.range(spec.rows_min, spec.rows_max);
  int s_count = 1;
  if (spec.sections_max >= 2 && rng.bernoulli(spec.section_p)) s_count = rng.range(2, spec.sections_max);
  s_count = std::max(1, std::min(s_count, rows / 2));

  std::vector<int> sizes(s_count, rows / s_count);
  for (int i = 0; i < rows % s_count; ++i) ++sizes[i];

  std::vector<std::string> pool = vocab;
  rng.shuffle(pool);
  std::vector<std::string> regions = kRegions;
  rng.shuffle(regions);
  // Each label appears once per page so every fact is identified by its
  // label and column.
  std::size_t next = 0;
  for (int s = 0; s < s_count; ++s) {
    Section sec;
    if (s_count > 1) sec.heading = regions[s % regions.size()] + " segment";
    while (static_cast<int>(sec.labels.size()) < sizes[s]) sec.labels.push_back(pool[next++]);
    rng.shuffle(sec.labels);
    for (const auto& label : sec.labels) {
      std::vector<std::vector<std::string>> row;
      const ValueKind kind = kind_of(label);
      double v = base_value(kind, rng);
      // year-over-year drift of at most 12%
      for (int c = 0; c < f.columns; ++c) {
        row.push_back(make_value(kind, v));
        v *= 1.0 + rng.uniform(-0.12, 0.12);
      }
      sec.values.push_back(std::move(row));
    }
    f.sections.push_back(std::move(sec));
  }
  return f;
}

std::string distractor(Rng& rng, const std::vector<std::string>& labels) {
  std::string s = pick(kProse, rng);
  const int n = rng.range(7, 12);
  for (int i = 1; i < n; ++i) s += " " + (rng.bernoulli(0.15) ? pick(labels, rng) : pick(kProse, rng));
  return capitalize(s);
}

struct Style {
  double pitch = 22;
  double gutter = 48;
  double x0 = kMarginX;
  std::string header_prefix = "December";
};

// Row layout inside one page; returns the span ids of the value cells in
// [section][row][col] order of `order`.
using CellIds = std::vector<std::vector<std::vector<int>>>;

struct RowOrder {
  std::vector<int> sections;               // section visiting order
  std::vector<std::vector<int>> rows;      // per section, row visiting order
};

RowOrder identity_order(const Facts& f) {
  RowOrder o;
  for (std::size_t s = 0; s < f.sections.size(); ++s) {
    o.sections.push_back(static_cast<int>(s));
    std::vector<int> r(f.sections[s].labels.size());
    std::iota(r.begin(), r.end(), 0);
    o.rows.push_back(std::move(r));
  }
  return o;
}

RowOrder shuffled_order(const Facts& f, Rng& rng) {
  RowOrder o = identity_order(f);
  rng.shuffle(o.sections);
  for (auto& r : o.rows) rng.shuffle(r);
  return o;
}

CellIds empty_ids(const Facts& f) {
  CellIds ids(f.sections.size());
  for (std::size_t s = 0; s < f.sections.size(); ++s)
    ids[s].assign(f.sections[s].labels.size(), std::vector<int>(f.columns, -1));
  return ids;
}

void maybe_noise(PageBuilder& b, double& y, const Style& st, double noise, Rng& rng,
                 const std::vector<std::string>& labels) {
  if (noise <= 0 || !rng.bernoulli(noise)) return;
  b.new_line(y);
  b.add_text(distractor(rng, labels), st.x0);
  y += st.pitch;
}

std::vector<std::string> all_labels(const Facts& f) {
  std::vector<std::string> v;
  for (const auto& s : f.sections) v.insert(v.end(), s.labels.begin(), s.labels.end());
  return v;
}

std::vector<std::string> label_words(const std::string& label, bool bullet = false) {
  auto w = split_words(capitalize(label));
  if (bullet) w.insert(w.begin(), "-");
  return w;
}

CellIds render_table(PageBuilder& b, const Facts& f, const RowOrder& order, const Style& st, double noise,
                     Rng& rng) {
  CellIds ids = empty_ids(f);
  const auto labels = all_labels(f);
  double label_w = 0;
  for (const auto& l : labels) label_w = std::max(label_w, text_width(label_words(l)));
  for (const auto& s : f.sections)
    if (!s.heading.empty()) label_w = std::max(label_w, text_width(split_words(capitalize(s.heading))));
  double value_w = 0;
  for (const auto& s : f.sections)
    for (const auto& row : s.values)
      for (const auto& v : row) value_w = std::max(value_w, text_width(v));
  std::vector<std::vector<std::string>> headers;
  for (int c = 0; c < f.columns; ++c) headers.push_back({st.header_prefix, std::to_string(f.first_year + c)});
  for (const auto& h : headers) value_w = std::max(value_w, text_width(h));
  auto col_right = [&](int c) { return st.x0 + label_w + (c + 1) * (st.gutter + value_w); };

  double y = kMarginTop;
  b.new_line(y);
  b.add_text(capitalize(f.title), st.x0);
  y += st.pitch * 1.5;
  maybe_noise(b, y, st, noise, rng, labels);
  b.new_line(y);
  for (int c = 0; c < f.columns; ++c) b.add_span(headers[c], col_right(c) - text_width(headers[c]));
  y += st.pitch;
  for (int s : order.sections) {
    const Section& sec = f.sections[s];
    if (!sec.heading.empty()) {
      y += st.pitch * 0.5;
      b.new_line(y);
      b.add_text(capitalize(sec.heading), st.x0);
      y += st.pitch;
    }
    for (int r : order.rows[s]) {
      b.new_line(y);
      b.add_span(label_words(sec.labels[r]), st.x0);
      for (int c = 0; c < f.columns; ++c) {
        const auto& v = sec.values[r][c];
        ids[s][r][c] = b.add_span(v, col_right(c) - text_width(v));
      }
      y += st.pitch;
    }
    maybe_noise(b, y, st, noise, rng, labels);
  }
  return ids;
}

CellIds render_list(PageBuilder& b, const Facts& f, const RowOrder& order, const Style& st, double noise, Rng& rng) {
  CellIds ids = empty_ids(f);
  const auto labels = all_labels(f);
  double y = kMarginTop;
  b.new_line(y);
  b.add_text(capitalize(f.title), st.x0);
  y += st.pitch * 1.5;
  maybe_noise(b, y, st, noise, rng, labels);
  for (int s : order.sections) {
    const Section& sec = f.sections[s];
    if (!sec.heading.empty()) {
      b.new_line(y);
      b.add_text(capitalize(sec.heading), st.x0);
      y += st.pitch;
    }
    for (int r : order.rows[s]) {
      b.new_line(y);
      const auto lw = label_words(sec.labels[r], true);
      b.add_span(lw, st.x0 + 12);
      double x = st.x0 + 12 + text_width(lw);
      for (int c = 0; c < f.columns; ++c) {
        x += st.gutter + rng.uniform(0, 12);
        ids[s][r][c] = b.add_span(sec.values[r][c], x);
        x += text_width(sec.values[r][c]);
      }
      y += st.pitch;
    }
    y += st.pitch * 0.5;
    maybe_noise(b, y, st, noise, rng, labels);
  }
  return ids;
}

CellIds render_paragraph(PageBuilder& b, const Facts& f, const RowOrder& order, const Style& st, double noise,
                         Rng& rng) {
  CellIds ids = empty_ids(f);
  const auto labels = all_labels(f);
  double y = kMarginTop;
  b.new_line(y);
  b.add_text("The " + f.title + " for the years " + std::to_string(f.first_year) + " to " +
                 std::to_string(f.first_year + f.columns - 1) + " are discussed below",
             st.x0);
  y += st.pitch * 1.5;
  maybe_noise(b, y, st, noise, rng, labels);
  for (int s : order.sections) {
    const Section& sec = f.sections[s];
    if (!sec.heading.empty()) {
      b.new_line(y);
      b.add_text("Results for the " + sec.heading + " were as follows", st.x0);
      y += st.pitch;
    }
    for (int r : order.rows[s]) {
      b.new_line(y);
      std::string phrase = pick(kPhrases, rng);
      phrase.replace(phrase.find("{}"), 2, sec.labels[r]);
      const auto pw = split_words(capitalize(phrase));
      b.add_span(pw, st.x0);
      double x = st.x0 + text_width(pw);
      for (int c = 0; c < f.columns; ++c) {
        x += st.gutter + rng.uniform(0, 12);
        ids[s][r][c] = b.add_span(sec.values[r][c], x);
        x += text_width(sec.values[r][c]);
      }
      y += st.pitch;
    }
    maybe_noise(b, y, st, noise, rng, labels);
  }
  return ids;
}

std::string pair_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair%04d", index);
  return buf;
}

}  // namespace

const char* layout_name(Layout l) {
  switch (l) {
    case Layout::Paragraph: return "paragraph";
    case Layout::List: return "list";
    case Layout::Table: return "table";
  }
  return "table";
}

const std::vector<std::string>& default_vocabulary() {
  static const std::vector<std::string> v = {
      "total revenue",        "cost of sales",         "gross profit",          "operating expenses",
      "research and development", "selling and marketing", "general and administrative", "operating income",
      "interest expense",     "income tax expense",    "net income",            "earnings per share",
      "cash and equivalents", "accounts receivable",   "total inventories",     "total assets",
      "accounts payable",     "long term debt",        "total liabilities",     "shareholder equity",
      "capital expenditure",  "free cash flow",        "depreciation and amortization", "employee headcount",
      "gross margin",         "operating margin",      "effective tax rate",    "return on equity",
      "dividends paid",       "share repurchases",     "order backlog",         "units shipped",
      "average selling price", "customer count",       "retention rate",        "deferred revenue",
      "goodwill impairment",  "restructuring charges", "other income",          "minority interest"};
  return v;
}

void CorpusSpec::validate() const {
  if (pages < 1) throw ValidationError("pages must be >= 1");
  double sum = 0;
  for (double w : layout_mix) {
    if (!(w >= 0) || !std::isfinite(w)) throw ValidationError("layout weights must be non-negative");
    sum += w;
  }
  if (!(sum > 0)) throw ValidationError("layout weights must not all be zero");
  if (rows_min < 1 || rows_max < rows_min) throw ValidationError("row range is empty");
  if (cols_min < 2 || cols_max < cols_min) throw ValidationError("column range must lie within [2, max] and be non-empty");
  if (sections_max < 1) throw ValidationError("sections_max must be >= 1");
  if (!(section_p >= 0 && section_p <= 1)) throw ValidationError("section_p must lie in [0, 1]");
  if (!(noise >= 0 && noise <= 1)) throw ValidationError("noise must lie in [0, 1]");
  const auto& vocab = vocabulary.empty() ? default_vocabulary() : vocabulary;
  if (static_cast<int>(vocab.size()) < rows_max)
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) + " labels, fewer than rows_max " +
                          std::to_string(rows_max));
  for (const auto& l : vocab)
    if (split_words(l).size() < 2)
      throw ValidationError("row label '" + l + "' must have at least two words so rows segment cleanly");
  // worst case: every row, every section heading and every distractor slot
  const int lines = rows_max + 2 * sections_max + kFixedLines;
  if (kMarginTop + lines * kMaxPitch > kCanvasHeight - kMarginBottom)
    throw ValidationError("rows_max " + std::to_string(rows_max) + " cannot fit the " +
                          std::to_string(static_cast<int>(kCanvasHeight)) + "-unit page");
  if (cols_max > 6) throw ValidationError("cols_max " + std::to_string(cols_max) + " cannot fit the page width");
}

json CorpusSpec::to_json() const {
  return {{"seed", seed},
          {"pages", pages},
          {"layout_mix", {{"paragraph", layout_mix[0]}, {"list", layout_mix[1]}, {"table", layout_mix[2]}}},
          {"rows", {rows_min, rows_max}},
          {"cols", {cols_min, cols_max}},
          {"sections_max", sections_max},
          {"section_p", section_p},
          {"noise", noise},
          {"vocabulary", vocabulary}};
}

CorpusSpec CorpusSpec::from_json(const json& j) {
  CorpusSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.pages = j.value("pages", s.pages);
    if (j.contains("layout_mix")) {
      const auto& m = j.at("layout_mix");
      s.layout_mix = {m.value("paragraph", 0.0), m.value("list", 0.0), m.value("table", 0.0)};
    }
    if (j.contains("rows")) std::tie(s.rows_min, s.rows_max) = std::pair{j["rows"][0].get<int>(), j["rows"][1].get<int>()};
    if (j.contains("cols")) std::tie(s.cols_min, s.cols_max) = std::pair{j["cols"][0].get<int>(), j["cols"][1].get<int>()};
    s.sections_max = j.value("sections_max", s.sections_max);
    s.section_p = j.value("section_p", s.section_p);
    s.noise = j.value("noise", s.noise);
    s.vocabulary = j.value("vocabulary", s.vocabulary);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed corpus spec: ") + e.what());
  }
  s.validate();
  return s;
}

CorpusSpec CorpusSpec::paper_scale(std::uint64_t seed) {
  CorpusSpec s;
  s.seed = seed;
  s.pages = 70;
  s.layout_mix = {0.0, 0.0, 1.0};
  s.rows_min = 19;
  s.rows_max = 31;
  s.cols_min = 3;
  s.cols_max = 4;
  s.section_p = 0.5;
  s.noise = 0.1;
  return s;
}

GeneratedPair generate_pair(const CorpusSpec& spec, int pair_index) {
  spec.validate();
  if (pair_index < 0) throw ValidationError("pair index must be non-negative");
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(pair_index)));
  const Facts f = draw_facts(spec, rng);
  const std::string name = pair_name(pair_index);

  GeneratedPair out;
  out.columns = f.columns;
  out.sections = static_cast<int>(f.sections.size());

  PageBuilder b1(name + "_p1", Layout::Table);
  Style s1;
  const RowOrder o1 = identity_order(f);
  const CellIds ids1 = render_table(b1, f, o1, s1, spec.noise, rng);
  out.page1 = b1.finish();

  const Layout l2 = static_cast<Layout>(rng.weighted(spec.layout_mix));
  Style s2;
  s2.pitch = rng.uniform(20, kMaxPitch);
  s2.gutter = rng.uniform(40, 64);
  s2.x0 = kMarginX + rng.uniform(-20, 40);
  s2.header_prefix = rng.bernoulli(0.5) ? "FY" : "Q4";
  const RowOrder o2 = shuffled_order(f, rng);
  PageBuilder b2(name + "_p2", l2);
  CellIds ids2;
  switch (l2) {
    case Layout::Table: ids2 = render_table(b2, f, o2, s2, spec.noise, rng); break;
    case Layout::List: ids2 = render_list(b2, f, o2, s2, spec.noise, rng); break;
    case Layout::Paragraph: ids2 = render_paragraph(b2, f, o2, s2, spec.noise, rng); break;
  }
  out.page2 = b2.finish();

  out.labels.graph1_id = out.page1.page_id;
  out.labels.graph2_id = out.page2.page_id;
  for (std::size_t s = 0; s < f.sections.size(); ++s)
    for (std::size_t r = 0; r < f.sections[s].labels.size(); ++r) {
      out.grid.push_back(ids1[s][r]);
      for (int c = 0; c < f.columns; ++c) out.labels.pairs.emplace_back(ids1[s][r][c], ids2[s][r][c]);
    }
  out.rows = static_cast<int>(out.grid.size());
  out.labels.extra = {{"table_columns", f.columns},
                      {"rows", out.rows},
                      {"sections", out.sections},
                      {"layout1", layout_name(Layout::Table)},
                      {"layout2", layout_name(l2)},
                      {"grid", out.grid}};
  return out;
}

ParagraphPage generate_paragraph_page(std::uint64_t seed, int paragraphs) {
  if (paragraphs < 1) throw ValidationError("need at least one paragraph");
  Rng rng(seed);
  ParagraphPage out;
  PageBuilder b("prose_" + std::to_string(seed), Layout::Paragraph);
  double y = kMarginTop;
  for (int p = 0; p < paragraphs; ++p) {
    const int lines = rng.range(4, 6);
    for (int l = 0; l < lines; ++l) {
      std::string text = capitalize(pick(kProse, rng));
      const int words = rng.range(10, 14);
      for (int w = 1; w < words; ++w) text += " " + pick(kProse, rng);
      b.new_line(y);
      b.add_text(text, kMarginX + (l == 0 ? 18 : 0));
      out.paragraph_of.push_back(p);
      y += 16;
    }
    y += 30;
  }
  out.page = b.finish();
  return out;
}

double layout_chi_square(const std::array<int, 3>& counts, const std::array<double, 3>& weights, int* dof) {
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  double stat = 0;
  int cats = 0;
  for (int i = 0; i < 3; ++i) {
    if (weights[i] <= 0) continue;
    const double e = n * weights[i] / wsum;
    stat += (counts[i] - e) * (counts[i] - e) / e;
    ++cats;
  }
  if (dof) *dof = std::max(0, cats - 1);
  return stat;
}

CorpusSummary generate_corpus(const CorpusSpec& spec, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  spec.validate();
  fs::path tmp = dir;
  tmp += ".tmp" + std::to_string(::getpid());
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  if (ec) throw IoError(tmp, "cannot create directory: " + ec.message());

  CorpusSummary sum;
  json pairs = json::array();
  long vertices = 0;
  try {
    for (int i = 0; i < spec.pages; ++i) {
      const GeneratedPair gp = generate_pair(spec, i);
      const std::string name = pair_name(i);
      const std::string t1 = name + "_p1.jsonl", t2 = name + "_p2.jsonl", lf = name + "_labels.json";
      write_file_atomic(tmp / t1, layout::tokens_to_jsonl(gp.page1.tokens));
      write_file_atomic(tmp / t2, layout::tokens_to_jsonl(gp.page2.tokens));
      train::LabeledPair labels = gp.labels;
      labels.graph1_id = t1;
      labels.graph2_id = t2;
      write_file_atomic(tmp / lf, labels.to_json().dump() + "\n");
      ++sum.layout_counts[static_cast<int>(gp.page2.layout)];
      sum.labels += static_cast<long>(gp.labels.pairs.size());
      vertices += static_cast<long>(gp.page1.spans.size() + gp.page2.spans.size());
      pairs.push_back({{"index", i},
                       {"seed", derive_seed(spec.seed, static_cast<std::uint64_t>(i))},
                       {"tokens1", t1},
                       {"tokens2", t2},
                       {"labels", lf},
                       {"layout2", layout_name(gp.page2.layout)},
                       {"rows", gp.rows},
                       {"columns", gp.columns},
                       {"sections", gp.sections},
                       {"vertices", {gp.page1.spans.size(), gp.page2.spans.size()}}});
    }
    sum.mean_vertices = static_cast<double>(vertices) / (2.0 * spec.pages);
    sum.chi_square = layout_chi_square(sum.layout_counts, spec.layout_mix, &sum.dof);
    sum.manifest = {{"version", 1},
                    {"pairs", pairs},
                    {"spec_echo", spec.to_json()},
                    {"layout_counts",
                     {{"paragraph", sum.layout_counts[0]}, {"list", sum.layout_counts[1]}, {"table", sum.layout_counts[2]}}},
                    {"chi_square", {{"statistic", sum.chi_square}, {"dof", sum.dof}}},
                    {"total_labels", sum.labels},
                    {"mean_vertices", sum.mean_vertices}};
    write_file_atomic(tmp / "manifest.json", sum.manifest.dump(2) + "\n");
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  if (ec) {
    fs::remove_all(tmp);
    throw IoError(dir, "cannot move corpus into place: " + ec.message());
  }
  return sum;
}

}  // namespace spanflow::synth
