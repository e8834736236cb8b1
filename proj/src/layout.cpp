#include "spanflow/layout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "spanflow/common.hpp"

namespace spanflow::layout {

using nlohmann::json;

BBox BBox::united(const BBox& o) const {
  return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
}

std::string Span::text() const {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t.text;
  }
  return out;
}

void validate_token(const Token& t) {
  if (t.text.empty()) throw ValidationError("token on page '" + t.page_id + "' has empty text");
  if (!(t.bbox.x0 < t.bbox.x1) || !(t.bbox.y0 < t.bbox.y1))
    throw ValidationError("token '" + t.text + "' has an empty or inverted bounding box");
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double default_line_tol(const std::vector<Token>& tokens) {
  if (tokens.empty()) return 0.5;
  std::vector<double> heights;
  heights.reserve(tokens.size());
  for (const auto& t : tokens) heights.push_back(t.bbox.height());
  return std::max(0.5, 0.25 * median(std::move(heights)));
}

std::vector<Line> group_lines(const std::vector<Token>& tokens, double line_tol) {
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return tokens[a].bbox.y1 < tokens[b].bbox.y1;
  });

  std::vector<Line> lines;
  std::vector<double> bottoms;
  auto flush = [&] {
    if (bottoms.empty()) return;
    auto& line = lines.back();
    std::stable_sort(line.tokens.begin(), line.tokens.end(),
                     [](const Token& a, const Token& b) { return a.bbox.x0 < b.bbox.x0; });
    line.bottom = median(bottoms);
    bottoms.clear();
  };

  double prev = 0;
  for (std::size_t idx : order) {
    const Token& t = tokens[idx];
    if (bottoms.empty() || t.bbox.y1 - prev > line_tol) {
      flush();
      lines.emplace_back();
    }
    lines.back().tokens.push_back(t);
    bottoms.push_back(t.bbox.y1);
    prev = t.bbox.y1;
  }
  flush();
  return lines;
}

std::vector<Span> cut_line(const Line& line, double gap_factor) {
  std::vector<Span> spans;
  if (line.tokens.empty()) return spans;

  const auto& toks = line.tokens;
  std::vector<bool> cut_after(toks.size(), false);
  if (toks.size() >= 3) {
    std::vector<double> positive;
    for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
      double gap = toks[i + 1].bbox.x0 - toks[i].bbox.x1;
      if (gap > 0) positive.push_back(gap);
    }
    if (!positive.empty()) {
      const double threshold = gap_factor * median(std::move(positive));
      for (std::size_t i = 0; i + 1 < toks.size(); ++i)
        cut_after[i] = (toks[i + 1].bbox.x0 - toks[i].bbox.x1) > threshold;
    }
  }

  Span current;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (current.tokens.empty())
      current.bbox = toks[i].bbox;
    else
      current.bbox = current.bbox.united(toks[i].bbox);
    current.tokens.push_back(toks[i]);
    if (cut_after[i] || i + 1 == toks.size()) {
      spans.push_back(std::move(current));
      current = Span{};
    }
  }
  return spans;
}

std::vector<Span> segment_page(const std::vector<Token>& tokens, const SegmentConfig& config) {
  for (const auto& t : tokens) {
    validate_token(t);
    if (t.page_id != tokens.front().page_id)
      throw ValidationError("segment_page: tokens span several pages ('" + tokens.front().page_id +
                            "', '" + t.page_id + "')");
  }
  if (!(config.gap_factor > 0)) throw ValidationError("gap_factor must be positive");
  const double tol = config.line_tol.value_or(default_line_tol(tokens));
  if (tol < 0) throw ValidationError("line_tol must be non-negative");

  std::vector<Span> spans;
  for (const auto& line : group_lines(tokens, tol)) {
    for (auto& s : cut_line(line, config.gap_factor)) {
      s.span_id = static_cast<int>(spans.size());
      spans.push_back(std::move(s));
    }
  }
  return spans;
}

std::vector<PageSpans> segment_document(const std::vector<Token>& tokens, const SegmentConfig& config) {
  std::vector<PageSpans> pages;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<Token>> per_page;
  for (const auto& t : tokens) {
    auto [it, inserted] = index.emplace(t.page_id, per_page.size());
    if (inserted) {
      per_page.emplace_back();
      pages.push_back({t.page_id, {}});
    }
    per_page[it->second].push_back(t);
  }
  for (std::size_t p = 0; p < pages.size(); ++p) pages[p].spans = segment_page(per_page[p], config);
  return pages;
}

namespace {

template <class F>
void for_each_jsonl(const std::string& text, F&& f) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError("JSONL line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      f(obj);
    } catch (const json::exception& e) {
      throw ValidationError("JSONL line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<Token> parse_tokens_jsonl(const std::string& text) {
  std::vector<Token> tokens;
  for_each_jsonl(text, [&](const json& o) {
    Token t;
    t.page_id = o.at("page_id").get<std::string>();
    t.text = o.at("text").get<std::string>();
    t.bbox = {o.at("x0").get<double>(), o.at("y0").get<double>(), o.at("x1").get<double>(),
              o.at("y1").get<double>()};
    validate_token(t);
    tokens.push_back(std::move(t));
  });
  return tokens;
}

std::string tokens_to_jsonl(const std::vector<Token>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    json o = {{"page_id", t.page_id}, {"text", t.text}, {"x0", t.bbox.x0},
              {"y0", t.bbox.y0},      {"x1", t.bbox.x1}, {"y1", t.bbox.y1}};
    out += o.dump();
    out += '\n';
  }
  return out;
}

json span_to_json(const Span& s) {
  return {{"page_id", s.page_id()}, {"span_id", s.span_id}, {"text", s.text()},
          {"x0", s.bbox.x0},        {"y0", s.bbox.y0},       {"x1", s.bbox.x1},
          {"y1", s.bbox.y1}};
}

std::string spans_to_jsonl(const std::vector<PageSpans>& pages) {
  std::string out;
  for (const auto& p : pages)
    for (const auto& s : p.spans) {
      out += span_to_json(s).dump();
      out += '\n';
    }
  return out;
}

std::vector<PageSpans> parse_spans_jsonl(const std::string& text) {
  std::vector<PageSpans> pages;
  std::unordered_map<std::string, std::size_t> index;
  for_each_jsonl(text, [&](const json& o) {
    Token t;
    t.page_id = o.at("page_id").get<std::string>();
    t.text = o.at("text").get<std::string>();
    t.bbox = {o.at("x0").get<double>(), o.at("y0").get<double>(), o.at("x1").get<double>(),
              o.at("y1").get<double>()};
    validate_token(t);
    auto [it, inserted] = index.emplace(t.page_id, pages.size());
    if (inserted) pages.push_back({t.page_id, {}});
    Span s;
    s.span_id = o.at("span_id").get<int>();
    s.bbox = t.bbox;
    s.tokens.push_back(std::move(t));
    pages[it->second].spans.push_back(std::move(s));
  });
  for (auto& p : pages)
    std::stable_sort(p.spans.begin(), p.spans.end(),
                     [](const Span& a, const Span& b) { return a.span_id < b.span_id; });
  return pages;
}

}  // namespace spanflow::layout
