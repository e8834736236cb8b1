#include "spanflow/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "spanflow/checkpoint.hpp"
#include "spanflow/common.hpp"
#include "spanflow/eval.hpp"
#include "spanflow/gnn.hpp"
#include "spanflow/layout.hpp"
#include "spanflow/pagegraph.hpp"
#include "spanflow/pipeline.hpp"
#include "spanflow/synthdoc.hpp"
#include "spanflow/train.hpp"

namespace spanflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::string config_path;
  std::uint64_t seed = 0;

  std::string input, output, corpus, checkpoint, log, embeddings, attention, svg;

  double gap_factor = 3.0;
  double line_tol = 0;  // 0 selects the per-page default

  int pages = 10, rows_min = 4, rows_max = 35, cols_min = 2, cols_max = 4, sections_max = 3;
  double section_p = 0.5, noise = 0.1;
  std::string layout_mix = "1,1,1";
  bool paper_scale = false;

  int dim = 360, heads = 4, layers = 8, order = 1;
  std::string rule = "and", attention_mode = "softmax";
  bool regularization = false;

  double margin = 1.0, learning_rate = 1e-4, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  int epochs = 400, folds = 5, min_count = 1, buckets = 1024;
  bool no_cv = false;

  std::string k_list = "1,3,5,10";

  int pair = 0, page = 1, query = 0;
};

std::string env_name(const std::string& flag) {
  std::string s = "SPANFLOW_";
  for (char c : flag) s.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return s;
}

// Every option is registered through here so a JSON config file can set
// it and the resolved configuration can be echoed.
class Options {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& name, T& ref, const std::string& help) {
    CLI::Option* opt;
    if constexpr (std::is_same_v<T, bool>)
      opt = app->add_flag("--" + name, ref, help);
    else
      opt = app->add_option("--" + name, ref, help);
    opt->envname(env_name(name));
    setters_[name] = [&ref, name](const json& j) {
      try {
        ref = j.get<T>();
      } catch (const json::exception&) {
        throw ValidationError("config key '" + name + "' has the wrong type");
      }
    };
    fields_[app->get_name()].push_back({name, [&ref] { return json(ref); }});
    return opt;
  }

  void apply(const json& j) {
    if (!j.is_object()) throw ValidationError("config file must hold a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      auto s = setters_.find(it.key());
      if (s == setters_.end()) throw ValidationError("unknown config key '" + it.key() + "'");
      s->second(it.value());
      applied_.insert(it.key());
    }
  }

  bool from_config(const std::string& name) const { return applied_.count(name) > 0; }

  json resolved(const std::string& sub) const {
    json out = json::object();
    auto it = fields_.find(sub);
    if (it != fields_.end())
      for (const auto& [name, get] : it->second) out[name] = get();
    return out;
  }

 private:
  std::map<std::string, std::function<void(const json&)>> setters_;
  std::set<std::string> applied_;
  std::map<std::string, std::vector<std::pair<std::string, std::function<json()>>>> fields_;
};

std::optional<std::string> prescan_config(int argc, const char* const* argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  if (const char* e = std::getenv("SPANFLOW_CONFIG")) return std::string(e);
  return std::nullopt;
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ValidationError("--" + flag + " is required");
}

std::vector<double> parse_doubles(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("--" + flag + ": '" + item + "' is not a number");
    }
  }
  return out;
}

std::vector<int> parse_k_list(const std::string& s) {
  std::vector<int> ks;
  for (double v : parse_doubles(s, "k-list")) {
    if (v < 1 || v != static_cast<int>(v)) throw ValidationError("--k-list entries must be positive integers");
    ks.push_back(static_cast<int>(v));
  }
  if (ks.empty()) throw ValidationError("--k-list is empty");
  return ks;
}

layout::SegmentConfig segment_config(const RunConfig& c) {
  if (!(c.gap_factor > 0)) throw ValidationError("--gap-factor must be positive");
  if (c.line_tol < 0) throw ValidationError("--line-tol must be >= 0");
  layout::SegmentConfig s;
  s.gap_factor = c.gap_factor;
  if (c.line_tol > 0) s.line_tol = c.line_tol;
  return s;
}

json segment_json(const layout::SegmentConfig& s) {
  return {{"gap_factor", s.gap_factor}, {"line_tol", s.line_tol ? json(*s.line_tol) : json(nullptr)}};
}

layout::SegmentConfig segment_from_json(const json& j) {
  layout::SegmentConfig s;
  s.gap_factor = j.value("gap_factor", 3.0);
  if (j.contains("line_tol") && !j["line_tol"].is_null()) s.line_tol = j["line_tol"].get<double>();
  return s;
}

graph::NeighborhoodRule parse_rule(const std::string& r) {
  if (r == "and") return graph::NeighborhoodRule::And;
  if (r == "or") return graph::NeighborhoodRule::LiteralOr;
  throw ValidationError("--rule must be 'and' or 'or'");
}

gnn::ModelConfig model_config(const RunConfig& c) {
  gnn::ModelConfig m;
  m.dim = c.dim;
  m.heads = c.heads;
  m.layers = c.layers;
  m.order = c.order;
  m.mode = gnn::parse_mode(c.attention_mode);
  m.regularization = c.regularization;
  m.rule = parse_rule(c.rule);
  m.validate();
  return m;
}

train::TrainConfig train_config(const RunConfig& c) {
  train::TrainConfig t;
  t.margin = c.margin;
  t.epochs = c.epochs;
  t.learning_rate = c.learning_rate;
  t.beta1 = c.beta1;
  t.beta2 = c.beta2;
  t.epsilon = c.epsilon;
  t.folds = c.folds;
  t.seed = c.seed;
  t.validate();
  return t;
}

synth::CorpusSpec corpus_spec(const RunConfig& c) {
  synth::CorpusSpec s = c.paper_scale ? synth::CorpusSpec::paper_scale(c.seed) : synth::CorpusSpec{};
  s.seed = c.seed;
  s.pages = c.pages;
  if (!c.paper_scale) {
    const auto mix = parse_doubles(c.layout_mix, "layout-mix");
    if (mix.size() != 3) throw ValidationError("--layout-mix needs three weights: paragraph,list,table");
    s.layout_mix = {mix[0], mix[1], mix[2]};
    s.rows_min = c.rows_min;
    s.rows_max = c.rows_max;
    s.cols_min = c.cols_min;
    s.cols_max = c.cols_max;
    s.sections_max = c.sections_max;
    s.section_p = c.section_p;
    s.noise = c.noise;
  }
  s.validate();
  return s;
}

train::Model model_from_checkpoint(const fs::path& path) {
  const gnn::Checkpoint ck = gnn::load_checkpoint(path);
  if (!ck.config.contains("vocab")) throw ValidationError(path.string() + ": checkpoint has no vocabulary");
  train::Model m;
  m.config = ck.model;
  m.stack = ck.stack;
  m.vocab = features::Vocab::from_json(ck.config["vocab"]);
  m.table = ck.embedding;
  if (m.table.rows() != m.vocab.rows() || m.table.cols() != m.config.dim)
    throw ValidationError(path.string() + ": embedding table does not match the vocabulary");
  return m;
}

layout::SegmentConfig checkpoint_segment(const fs::path& path) {
  const json j = json::parse(read_file(path));
  return segment_from_json(j.at("config").value("segment", json::object()));
}

// --- subcommands ----------------------------------------------------------

json cmd_segment(const RunConfig& c) {
  require(c.input, "input");
  require(c.output, "output");
  const auto seg = segment_config(c);
  const auto pages = layout::segment_document(layout::parse_tokens_jsonl(read_file(c.input)), seg);
  write_file_atomic(c.output, layout::spans_to_jsonl(pages));
  std::size_t spans = 0;
  for (const auto& p : pages) spans += p.spans.size();
  return {{"pages", pages.size()}, {"spans", spans}, {"output", c.output}};
}

json cmd_graph(const RunConfig& c) {
  require(c.input, "input");
  require(c.output, "output");
  if (c.order < 1) throw ValidationError("--order must be >= 1");
  const auto rule = parse_rule(c.rule);
  const auto pages = layout::parse_spans_jsonl(read_file(c.input));
  json out = json::array();
  long edges = 0;
  std::vector<std::pair<fs::path, std::string>> svgs;
  for (const auto& p : pages) {
    const auto g = graph::build_page_graph(p.spans);
    const auto ax = graph::expand_neighborhood(g, c.order, rule);
    json j = graph::graph_to_json(g);
    j["page_id"] = p.page_id;
    j["order"] = c.order;
    j["neighborhood_pairs"] = ax.cast<long>().sum();
    for (const auto& nb : g.neighbors)
      for (int v : nb) edges += v >= 0;
    out.push_back(std::move(j));
    if (!c.svg.empty()) svgs.emplace_back(fs::path(c.svg) / (p.page_id + ".svg"), graph::graph_to_svg(g));
  }
  write_file_atomic(c.output, json{{"pages", out}}.dump() + "\n");
  if (!svgs.empty()) fs::create_directories(c.svg);
  for (const auto& [path, svg] : svgs) write_file_atomic(path, svg);
  return {{"pages", pages.size()}, {"edges", edges}, {"output", c.output}};
}

json cmd_synth(const RunConfig& c) {
  require(c.output, "output");
  const auto spec = corpus_spec(c);
  const auto sum = synth::generate_corpus(spec, c.output);
  return {{"pairs", spec.pages},
          {"labels", sum.labels},
          {"mean_vertices", sum.mean_vertices},
          {"layout_counts", sum.manifest["layout_counts"]},
          {"chi_square", sum.chi_square},
          {"output", c.output}};
}

json cmd_train(const RunConfig& c, std::ostream& err) {
  require(c.corpus, "corpus");
  require(c.output, "output");
  const auto mc = model_config(c);
  const auto tc = train_config(c);
  const auto seg = segment_config(c);
  if (c.min_count < 1) throw ValidationError("--min-count must be >= 1");
  if (c.buckets < 1) throw ValidationError("--buckets must be >= 1");

  const auto pairs = load_corpus(c.corpus, seg);
  const auto vocab = corpus_vocab(pairs, c.min_count, c.buckets, mc.dim);
  const auto batches = make_batches(pairs, vocab);

  std::string log_text;
  std::map<int, double> last_val;
  double last_loss = 0;
  auto on_epoch = [&](const train::EpochLog& l) {
    log_text += l.to_json().dump() + "\n";
    if (l.val_top1) last_val[l.fold] = *l.val_top1;
    if (l.fold < 0) last_loss = l.train_loss;
    if (l.epoch % 10 == 0 || l.epoch == tc.epochs) err << l.to_json().dump() << "\n";
  };
  train::Model m;
  if (c.no_cv) {
    m = train::init_model(mc, vocab, tc.seed);
    std::vector<const train::Batch*> all;
    for (const auto& b : batches) all.push_back(&b);
    train::Trainer t(tc, m, all);
    for (int e = 1; e <= tc.epochs; ++e) {
      train::EpochLog l;
      l.epoch = e;
      l.fold = -1;
      l.train_loss = t.run_epoch(e);
      on_epoch(l);
    }
  } else {
    m = train::cross_validate(batches, mc, vocab, tc, on_epoch);
  }

  gnn::Checkpoint ck;
  ck.model = m.config;
  ck.config = {{"train", tc.to_json()}, {"vocab", vocab.to_json()}, {"segment", segment_json(seg)}};
  ck.stack = m.stack;
  ck.embedding = m.table;
  gnn::save_checkpoint(c.output, ck);
  const std::string log_path = c.log.empty() ? c.output + ".log.jsonl" : c.log;
  write_file_atomic(log_path, log_text);

  json cv = nullptr;
  if (!last_val.empty()) {
    double s = 0;
    for (auto [f, v] : last_val) s += v;
    cv = s / static_cast<double>(last_val.size());
  }
  long labels = 0;
  for (const auto& b : batches) labels += static_cast<long>(b.pairs.size());
  return {{"pairs", batches.size()}, {"labels", labels},      {"epochs", tc.epochs}, {"final_train_loss", last_loss},
          {"cv_val_top1", cv},       {"checkpoint", c.output}, {"log", log_path}};
}

json cmd_eval(const RunConfig& c) {
  require(c.checkpoint, "checkpoint");
  require(c.corpus, "corpus");
  require(c.output, "output");
  const auto ks = parse_k_list(c.k_list);
  const auto m = model_from_checkpoint(c.checkpoint);
  const auto pairs = load_corpus(c.corpus, checkpoint_segment(c.checkpoint));
  const auto batches = make_batches(pairs, m.vocab);
  const auto report = evaluate_corpus(pairs, batches, m, ks);
  write_file_atomic(c.output, report.to_json().dump(2) + "\n");
  if (!c.embeddings.empty()) {
    fs::create_directories(c.embeddings);
    for (const auto& b : batches)
      write_file_atomic(fs::path(c.embeddings) / (b.id + ".csv"), eval::embeddings_csv(b.graph, embed_batch(b, m)));
  }
  const json r = report.to_json();
  return {{"top_k", r["top_k"]}, {"compositionality", r["compositionality"]["rate"]}, {"report", c.output}};
}

json cmd_rollout(const RunConfig& c) {
  require(c.checkpoint, "checkpoint");
  require(c.output, "output");
  if (c.input.empty() == c.corpus.empty()) throw ValidationError("give exactly one of --input or --corpus");
  const auto m = model_from_checkpoint(c.checkpoint);
  const auto seg = checkpoint_segment(c.checkpoint);

  train::Batch b;
  graph::PageGraph page;
  int offset = 0;
  if (!c.input.empty()) {
    page = graph::build_page_graph(layout::segment_page(layout::parse_tokens_jsonl(read_file(c.input)), seg));
    b.id = c.input;
    b.graph = page;
    b.n1 = page.size();
    for (const auto& v : page.vertices) b.rows.push_back(features::span_rows(v, m.vocab));
  } else {
    if (c.page != 1 && c.page != 2) throw ValidationError("--page must be 1 or 2");
    const auto pairs = load_corpus(c.corpus, seg);
    if (c.pair < 0 || c.pair >= static_cast<int>(pairs.size()))
      throw ValidationError("--pair " + std::to_string(c.pair) + " is out of range for " + std::to_string(pairs.size()) +
                            " pairs");
    b = train::make_batch(pairs[c.pair].name, pairs[c.pair].g1, pairs[c.pair].g2, pairs[c.pair].labels, m.vocab);
    page = c.page == 1 ? pairs[c.pair].g1 : pairs[c.pair].g2;
    offset = c.page == 1 ? 0 : b.n1;
  }
  int q = -1;
  for (int i = 0; i < page.size(); ++i)
    if (page.vertices[i].span_id == c.query) q = i;
  if (q < 0) throw ValidationError("--query span " + std::to_string(c.query) + " is not on the page");

  const auto masks = gnn::make_masks(b.graph, m.config);
  const auto fr = gnn::forward(masks, train::batch_features(b, m), m.stack, m.config);
  const Eigen::MatrixXd r = gnn::rollout(fr.attention);
  const Eigen::VectorXd w = r.row(offset + q).segment(offset, page.size()).transpose();
  write_file_atomic(c.output, eval::overlay_svg(page, w, q));
  if (!c.attention.empty()) write_file_atomic(c.attention, gnn::attention_dump(fr.attention).dump() + "\n");

  std::vector<int> order(page.size());
  for (int i = 0; i < page.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b2) { return w(a) > w(b2); });
  json top = json::array();
  for (int i = 0; i < std::min<int>(5, page.size()); ++i) top.push_back(page.vertices[order[i]].span_id);
  return {{"query", c.query}, {"row_sum", r.row(offset + q).sum()}, {"top_spans", top}, {"output", c.output}};
}

}  // namespace

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  Options o;
  CLI::App app{"Span graphs, graph-transformer training and evaluation for paired document pages", "spanflow"};
  app.require_subcommand(1);

  auto* seg = app.add_subcommand("segment", "Group tokens into line spans");
  auto* gr = app.add_subcommand("graph", "Build reading-pattern graphs from span JSONL");
  auto* sy = app.add_subcommand("synth", "Generate a synthetic paired corpus");
  auto* tr = app.add_subcommand("train", "Train with cross-validation and a final fit");
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a corpus");
  auto* ro = app.add_subcommand("rollout", "Attention rollout overlay for one query span");
  for (auto* s : {seg, gr, sy, tr, ev, ro})
    s->add_option("--config", c.config_path, "JSON file of option values (flags and SPANFLOW_* variables win)")
        ->envname("SPANFLOW_CONFIG");

  auto add_segment_opts = [&](CLI::App* s) {
    o.add(s, "gap-factor", c.gap_factor, "Cut where a gap exceeds this multiple of the median gap");
    o.add(s, "line-tol", c.line_tol, "Line grouping tolerance; 0 uses a quarter of the median token height");
  };
  auto add_model_opts = [&](CLI::App* s) {
    o.add(s, "dim", c.dim, "Model width d");
    o.add(s, "heads", c.heads, "Attention heads H");
    o.add(s, "layers", c.layers, "Encoder layers");
    o.add(s, "order", c.order, "Neighborhood order x");
    o.add(s, "rule", c.rule, "Order-x inclusion rule: and | or");
    o.add(s, "attention-mode", c.attention_mode, "softmax | literal_eq2");
    o.add(s, "regularization", c.regularization, "Zero far value vectors (always on when order > 1)");
  };

  o.add(seg, "input", c.input, "Token JSONL");
  o.add(seg, "output", c.output, "Span JSONL to write");
  add_segment_opts(seg);

  o.add(gr, "input", c.input, "Span JSONL");
  o.add(gr, "output", c.output, "Graph JSON to write");
  o.add(gr, "order", c.order, "Neighborhood order x");
  o.add(gr, "rule", c.rule, "Order-x inclusion rule: and | or");
  o.add(gr, "svg", c.svg, "Directory for per-page SVG drawings (optional)");

  o.add(sy, "output", c.output, "Corpus directory (replaced)");
  o.add(sy, "seed", c.seed, "Generator seed (required)");
  o.add(sy, "pages", c.pages, "Number of page pairs");
  o.add(sy, "rows-min", c.rows_min, "Fewest value rows per table");
  o.add(sy, "rows-max", c.rows_max, "Most value rows per table");
  o.add(sy, "cols-min", c.cols_min, "Fewest value columns");
  o.add(sy, "cols-max", c.cols_max, "Most value columns");
  o.add(sy, "sections-max", c.sections_max, "Most sections per table");
  o.add(sy, "section-p", c.section_p, "Chance a table is split into sections");
  o.add(sy, "noise", c.noise, "Chance of a distractor line at each slot");
  o.add(sy, "layout-mix", c.layout_mix, "Page-2 weights paragraph,list,table");
  o.add(sy, "paper-scale", c.paper_scale, "70 large table pairs, about 100 vertices per page");

  o.add(tr, "corpus", c.corpus, "Corpus directory with manifest.json");
  o.add(tr, "output", c.output, "Checkpoint JSON to write");
  o.add(tr, "log", c.log, "Epoch log JSONL (default: <output>.log.jsonl)");
  o.add(tr, "seed", c.seed, "Training seed (required)");
  add_segment_opts(tr);
  add_model_opts(tr);
  o.add(tr, "margin", c.margin, "Contrastive margin m");
  o.add(tr, "learning-rate", c.learning_rate, "Adam step size");
  o.add(tr, "beta1", c.beta1, "Adam first-moment decay");
  o.add(tr, "beta2", c.beta2, "Adam second-moment decay");
  o.add(tr, "epsilon", c.epsilon, "Adam epsilon");
  o.add(tr, "epochs", c.epochs, "Epochs per fold and for the final fit");
  o.add(tr, "folds", c.folds, "Cross-validation folds");
  o.add(tr, "min-count", c.min_count, "Occurrences needed for a word to enter the vocabulary");
  o.add(tr, "buckets", c.buckets, "Hash buckets for unknown words");
  o.add(tr, "no-cv", c.no_cv, "Skip cross-validation, run only the final fit");

  o.add(ev, "checkpoint", c.checkpoint, "Checkpoint JSON");
  o.add(ev, "corpus", c.corpus, "Corpus directory with manifest.json");
  o.add(ev, "output", c.output, "Report JSON to write");
  o.add(ev, "k-list", c.k_list, "Comma-separated top-k cut-offs");
  o.add(ev, "embeddings", c.embeddings, "Directory for per-pair embedding CSV files (optional)");

  o.add(ro, "checkpoint", c.checkpoint, "Checkpoint JSON");
  o.add(ro, "input", c.input, "Token JSONL of a single page");
  o.add(ro, "corpus", c.corpus, "Corpus directory, used with --pair and --page");
  o.add(ro, "pair", c.pair, "Pair index in the corpus manifest");
  o.add(ro, "page", c.page, "Page of the pair: 1 or 2");
  o.add(ro, "query", c.query, "Query span id");
  o.add(ro, "output", c.output, "SVG overlay to write");
  o.add(ro, "attention", c.attention, "Per-layer attention dump JSON (optional)");

  try {
    if (auto path = prescan_config(argc, argv)) {
      try {
        o.apply(json::parse(read_file(*path)));
      } catch (const json::parse_error& e) {
        throw ValidationError(*path + ": " + e.what());
      }
    }
    for (auto* s : {seg, gr, sy, tr, ev, ro})
      for (auto* opt : s->get_options()) opt->capture_default_str();

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      app.exit(e, out, err);
      return 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if ((name == "train" || name == "synth") && sub->count("--seed") == 0 && !o.from_config("seed"))
      throw ValidationError("--seed is required");
    err << json{{"event", "config"}, {"command", name}, {"config", o.resolved(name)}}.dump() << "\n";

    json summary;
    if (name == "segment") summary = cmd_segment(c);
    else if (name == "graph") summary = cmd_graph(c);
    else if (name == "synth") summary = cmd_synth(c);
    else if (name == "train") summary = cmd_train(c, err);
    else if (name == "eval") summary = cmd_eval(c);
    else summary = cmd_rollout(c);
    summary["command"] = name;
    out << summary.dump() << std::endl;
    return 0;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ComputeError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace spanflow::cli
