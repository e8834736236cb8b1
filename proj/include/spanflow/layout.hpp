#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace spanflow::layout {

// Page units, origin top-left, y grows downward.
struct BBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  BBox united(const BBox& o) const;
  bool operator==(const BBox&) const = default;
};

struct Token {
  std::string text;
  BBox bbox;
  std::string page_id;

  bool operator==(const Token&) const = default;
};

struct Line {
  std::vector<Token> tokens;  // ascending x0
  double bottom = 0;          // median token bottom
};

struct Span {
  std::vector<Token> tokens;
  BBox bbox;
  int span_id = -1;

  std::string text() const;  // tokens joined by a single space
  const std::string& page_id() const { return tokens.front().page_id; }
};

struct SegmentConfig {
  double gap_factor = 3.0;
  // Unset: 0.25 x median token height of the page, floored at 0.5.
  std::optional<double> line_tol;
};

// Throws ValidationError for empty text or inverted boxes.
void validate_token(const Token& t);

double default_line_tol(const std::vector<Token>& tokens);

// Single-linkage 1-D clustering on token bottoms. Lines come out sorted by
// bottom, tokens inside each line by x0.
std::vector<Line> group_lines(const std::vector<Token>& tokens, double line_tol);

// Cuts a line at gaps wider than gap_factor x the median positive gap.
// span_id is left unassigned (-1).
std::vector<Span> cut_line(const Line& line, double gap_factor);

std::vector<Span> segment_page(const std::vector<Token>& tokens, const SegmentConfig& config = {});

// Pages in order of first appearance, each segmented independently.
struct PageSpans {
  std::string page_id;
  std::vector<Span> spans;
};
std::vector<PageSpans> segment_document(const std::vector<Token>& tokens, const SegmentConfig& config = {});

// JSONL: one object per line.
std::vector<Token> parse_tokens_jsonl(const std::string& text);
std::string tokens_to_jsonl(const std::vector<Token>& tokens);
std::string spans_to_jsonl(const std::vector<PageSpans>& pages);
// Reads span JSONL back; every span becomes a single token carrying the
// span text and box, which is all the graph stage needs.
std::vector<PageSpans> parse_spans_jsonl(const std::string& text);

nlohmann::json span_to_json(const Span& span);

}  // namespace spanflow::layout
