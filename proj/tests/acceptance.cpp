// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only
// when every criterion passes. Tolerances and protocol constants are fixed
// below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "spanflow/cli.hpp"
#include "spanflow/common.hpp"
#include "spanflow/eval.hpp"
#include "spanflow/gnn.hpp"
#include "spanflow/pagegraph.hpp"
#include "spanflow/pipeline.hpp"
#include "spanflow/synthdoc.hpp"
#include "spanflow/train.hpp"
#include "test_support.hpp"

using namespace spanflow;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

// criterion 1
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 10.0;
constexpr double kFdStep = 1e-5;
// criterion 2
constexpr double kZeroedTol = 1e-9;
constexpr double kRemovedMin = 1e-6;
// criteria 3-6: retrieval protocol
constexpr std::uint64_t kCorpusSeed = 7;
constexpr int kTrainPairs = 40, kHeldOutPairs = 10;
constexpr int kDim = 64, kHeads = 8, kLayers = 8;
constexpr int kEpochs = 150;
constexpr int kBuckets = 1024;
constexpr double kLearningRate = 5e-4;
constexpr std::uint64_t kModelSeed = 11;
constexpr double kTop1Min = 0.80, kTop10Min = 0.95;
constexpr double kRetrievalMinutes = 30.0;
constexpr double kAblationGap = 0.05;
constexpr int kCompTables = 3, kCompRowsMin = 20, kCompRowsMax = 24;
constexpr double kCompMin = 0.60;
constexpr double kRowSumTol = 1e-9;
// criterion 8
constexpr int kScanEmbeddings = 200;
constexpr int kHopGraphs = 30;
constexpr double kBlockRelTol = 1e-9;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

graph::PageGraph grid_graph(int rows, int cols, double hole_p, Rng& rng) {
  return graph::build_page_graph(testsupport::grid_spans(rows, cols, hole_p, rng));
}

// --- 1 ----------------------------------------------------------------------

double worst_gradient_error(const gnn::ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const auto g = grid_graph(2, 2, 0.0, rng);
  const auto masks = gnn::make_masks(g, cfg);
  MatrixXd x = testsupport::random_matrix(g.size(), cfg.dim, rng);
  const MatrixXd w = testsupport::random_matrix(g.size(), cfg.dim, rng);
  gnn::EncoderStack stack = gnn::init_stack(cfg, seed + 1);
  for (auto& L : stack.layers)
    for (auto* v : {&L.b1, &L.b2, &L.ln1_bias, &L.ln2_bias, &L.ln1_gain, &L.ln2_gain})
      for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) += rng.uniform(-0.3, 0.3);

  gnn::ForwardCache cache;
  gnn::forward(masks, x, stack, cfg, &cache);
  const auto grads = gnn::backward(w, cache, stack, cfg);
  auto loss = [&] { return w.cwiseProduct(gnn::forward(masks, x, stack, cfg).embeddings).sum(); };
  double worst = 0;
  auto probe = [&](double& slot, double analytic) {
    const double orig = slot;
    slot = orig + kFdStep;
    const double up = loss();
    slot = orig - kFdStep;
    const double down = loss();
    slot = orig;
    worst = std::max(worst, testsupport::grad_error(analytic, (up - down) / (2 * kFdStep)));
  };
  std::vector<std::span<const double>> analytic;
  gnn::for_each_param(grads.params, [&](const std::string&, auto buf, auto, auto) { analytic.push_back(buf); });
  std::size_t t = 0;
  gnn::for_each_param(stack, [&](const std::string&, std::span<double> buf, auto, auto) {
    for (std::size_t i = 0; i < buf.size(); ++i) probe(buf[i], analytic[t][i]);
    ++t;
  });
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index c = 0; c < x.cols(); ++c) probe(x(i, c), grads.input(i, c));
  return worst;
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  gnn::ModelConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.order = 1;
  gnn::ModelConfig reg = cfg;
  reg.regularization = true;
  const double worst = std::max(worst_gradient_error(cfg, 1), worst_gradient_error(reg, 2));
  const double secs = seconds_since(t0);
  report(1, worst < kGradTol && secs < kGradSeconds,
         fmt("worst relative error %.2e (< %.0e), %.2f s (< %.0f s)", worst, kGradTol, secs, kGradSeconds));
}

// --- 2 ----------------------------------------------------------------------

void criterion_mechanism() {
  Rng rng(21);
  const auto g = grid_graph(5, 5, 0.0, rng);
  gnn::ModelConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.order = 5;
  cfg.regularization = true;
  const auto masks = gnn::make_masks(g, cfg);
  const auto stack = gnn::init_stack(cfg, 22);
  const MatrixXd x = testsupport::random_matrix(g.size(), cfg.dim, rng, 2.0);
  gnn::ForwardCache cache;
  gnn::forward(masks, x, stack, cfg, &cache);

  const auto& h = g.require_hops();
  double zeroed_max = 0, removed_min = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < cache.layers.size(); ++l) {
    const auto& c = cache.layers[l];
    const auto base = gnn::attend(c.q, c.k, c.v, masks, cfg, static_cast<int>(l));
    for (int i = 0; i < g.size(); ++i) {
      MatrixXd v0 = c.v;
      gnn::GraphMasks removed = masks;
      bool any_far = false;
      for (int j = 0; j < g.size(); ++j) {
        const int r2 = h.vert(i, j) * h.vert(i, j) + h.hor(i, j) * h.hor(i, j);
        if (r2 <= 1) continue;
        v0.row(j).setZero();
        removed.attend(i, j) = 0.0;
        removed.value(i, j) = 0.0;
        any_far = true;
      }
      if (!any_far) continue;
      const auto zeroed = gnn::attend(c.q, c.k, v0, masks, cfg, static_cast<int>(l));
      const auto gone = gnn::attend(c.q, c.k, c.v, removed, cfg, static_cast<int>(l));
      zeroed_max = std::max(zeroed_max, (zeroed.concat.row(i) - base.concat.row(i)).cwiseAbs().maxCoeff());
      removed_min = std::min(removed_min, (gone.concat.row(i) - base.concat.row(i)).cwiseAbs().maxCoeff());
    }
  }
  report(2, zeroed_max <= kZeroedTol && removed_min > kRemovedMin,
         fmt("zeroing far values moves outputs by at most %.1e (<= %.0e); removing far vertices moves every "
             "query by at least %.2e (> %.0e)",
             zeroed_max, kZeroedTol, removed_min, kRemovedMin));
}

// --- 3-6 --------------------------------------------------------------------

struct Protocol {
  std::vector<cli::CorpusPair> train_pairs, held_out, comp_tables;
  features::Vocab vocab;
  std::vector<train::Batch> train_batches, held_batches, comp_batches;
};

synth::CorpusSpec retrieval_spec() {
  synth::CorpusSpec s;
  s.seed = kCorpusSeed;
  s.pages = kTrainPairs + kHeldOutPairs;
  return s;
}

Protocol build_protocol() {
  Protocol p;
  const auto spec = retrieval_spec();
  for (int i = 0; i < spec.pages; ++i)
    (i < kTrainPairs ? p.train_pairs : p.held_out).push_back(cli::make_corpus_pair(synth::generate_pair(spec, i), {}));
  synth::CorpusSpec cs = spec;
  cs.seed = derive_seed(kCorpusSeed, 99);
  cs.pages = kCompTables;
  cs.rows_min = kCompRowsMin;
  cs.rows_max = kCompRowsMax;
  cs.cols_min = cs.cols_max = 2;
  cs.layout_mix = {0.0, 0.0, 1.0};
  for (int i = 0; i < kCompTables; ++i) p.comp_tables.push_back(cli::make_corpus_pair(synth::generate_pair(cs, i), {}));
  p.vocab = cli::corpus_vocab(p.train_pairs, 1, kBuckets, kDim);
  p.train_batches = cli::make_batches(p.train_pairs, p.vocab);
  p.held_batches = cli::make_batches(p.held_out, p.vocab);
  p.comp_batches = cli::make_batches(p.comp_tables, p.vocab);
  return p;
}

struct Trained {
  train::Model model;
  eval::EvalReport held;
  double seconds = 0;
};

Trained train_order(const Protocol& p, int order) {
  const auto t0 = Clock::now();
  gnn::ModelConfig mc;
  mc.dim = kDim;
  mc.heads = kHeads;
  mc.layers = kLayers;
  mc.order = order;
  mc.regularization = true;
  train::TrainConfig tc;
  tc.epochs = kEpochs;
  tc.learning_rate = kLearningRate;
  tc.seed = kModelSeed;
  Trained out;
  out.model = train::init_model(mc, p.vocab, kModelSeed);
  std::vector<const train::Batch*> ptrs;
  for (const auto& b : p.train_batches) ptrs.push_back(&b);
  train::Trainer t(tc, out.model, ptrs);
  double loss = 0;
  for (int e = 1; e <= kEpochs; ++e) loss = t.run_epoch(e);
  out.held = cli::evaluate_corpus(p.held_out, p.held_batches, out.model, {1, 3, 5, 10});
  out.seconds = seconds_since(t0);
  std::printf("  order %d: final loss %.4f, held-out top-1 %.3f top-10 %.3f, %.0f s\n", order, loss,
              out.held.top_k.at(1), out.held.top_k.at(10), out.seconds);
  std::fflush(stdout);
  return out;
}

void criterion_retrieval(const Trained& m8) {
  const double top1 = m8.held.top_k.at(1), top10 = m8.held.top_k.at(10);
  const double minutes = m8.seconds / 60.0;
  report(3, top1 >= kTop1Min && top10 >= kTop10Min && minutes < kRetrievalMinutes,
         fmt("order 8 held-out top-1 %.3f (>= %.2f), top-10 %.3f (>= %.2f), %.1f min (< %.0f)", top1, kTop1Min, top10,
             kTop10Min, minutes, kRetrievalMinutes));
}

void criterion_ablation(const Trained& m8, const Trained& m5, const Trained& m1) {
  const double a = m8.held.top_k.at(1), b = m5.held.top_k.at(1), c = m1.held.top_k.at(1);
  report(4, a >= b && b >= c && a - c >= kAblationGap,
         fmt("top-1 order 8 %.3f, order 5 %.3f, order 1 %.3f; need 8 >= 5 >= 1 and 8 - 1 >= %.2f (got %.3f)", a, b, c,
             kAblationGap, a - c));
}

struct LearnedComposition {
  eval::CompositionalityResult result;
  int tables = 0, min_rows = 1 << 30;
};

LearnedComposition learned_composition(const Protocol& p, const train::Model& m) {
  LearnedComposition out;
  for (std::size_t i = 0; i < p.comp_tables.size(); ++i) {
    const auto cells = cli::grid_embeddings(p.comp_tables[i], cli::embed_batch(p.comp_batches[i], m));
    if (cells.empty() || cells.front().size() != 2) continue;
    out.result.merge(eval::compositionality(cells));
    out.min_rows = std::min<int>(out.min_rows, static_cast<int>(cells.size()));
    ++out.tables;
  }
  return out;
}

void criterion_compositionality(const Protocol& p, const Trained& m8, const Trained& m5, const Trained& m1) {
  const auto lc = learned_composition(p, m8.model);
  const auto& learned = lc.result;
  const int tables = lc.tables, min_rows = lc.min_rows;
  // v[i][c] = r_i + c_c with random row and column vectors.
  Rng rng(31);
  std::vector<VectorXd> r(kCompRowsMin), c(2);
  for (auto& v : r) v = testsupport::random_matrix(kDim, 1, rng).col(0);
  for (auto& v : c) v = testsupport::random_matrix(kDim, 1, rng).col(0);
  std::vector<std::vector<VectorXd>> additive(r.size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (const auto& col : c) additive[i].push_back(r[i] + col);
  const double fixture = eval::compositionality(additive).rate();
  report(5, tables >= kCompTables && min_rows >= kCompRowsMin && learned.rate() >= kCompMin && fixture == 1.0,
         fmt("order 8 rate %.3f over %ld applications on %d tables of >= %d rows (>= %.2f); additive fixture %.3f "
             "(== 1)",
             learned.rate(), learned.applications, tables, min_rows, kCompMin, fixture));
  std::printf("  compositionality of the ablation models: order 5 %.3f, order 1 %.3f\n",
              learned_composition(p, m5.model).result.rate(), learned_composition(p, m1.model).result.rate());
}

void criterion_rollout(const Trained& m8) {
  const auto pp = synth::generate_paragraph_page(derive_seed(kCorpusSeed, 41));
  const auto page = graph::build_page_graph(layout::segment_page(pp.page.tokens));
  train::Batch b;
  b.id = "paragraphs";
  b.graph = page;
  b.n1 = page.size();
  for (const auto& v : page.vertices) b.rows.push_back(features::span_rows(v, m8.model.vocab));
  const auto& m = m8.model;
  const auto fr = gnn::forward(gnn::make_masks(b.graph, m.config), train::batch_features(b, m), m.stack, m.config);
  const MatrixXd r = gnn::rollout(fr.attention);
  const double row_err = (r.rowwise().sum().array() - 1.0).abs().maxCoeff();

  auto paragraph = [&](int v) { return pp.paragraph_of.at(page.vertices[v].span_id); };
  // margin = mean neighbor weight - mean weight of the remaining spans
  auto margin = [&](int q) -> std::optional<double> {
    std::set<int> nb;
    for (auto d : {graph::Direction::Up, graph::Direction::Down}) {
      const int j = page.neighbor(q, d);
      if (j >= 0 && paragraph(j) == paragraph(q)) nb.insert(j);
    }
    if (nb.empty()) return std::nullopt;
    double in = 0, out = 0;
    int n_out = 0;
    for (int j = 0; j < page.size(); ++j) {
      if (j == q) continue;
      if (nb.count(j)) {
        in += r(q, j);
      } else {
        out += r(q, j);
        ++n_out;
      }
    }
    return in / static_cast<double>(nb.size()) - out / std::max(1, n_out);
  };
  // fixed query: middle line of the second paragraph
  std::vector<int> second;
  for (int v = 0; v < page.size(); ++v)
    if (paragraph(v) == 1) second.push_back(v);
  const int query = second.at(second.size() / 2);
  const auto qm = margin(query);
  int holds = 0, eligible = 0;
  for (int v = 0; v < page.size(); ++v)
    if (auto mv = margin(v)) {
      ++eligible;
      holds += *mv > 0;
    }
  report(6, row_err <= kRowSumTol && qm && *qm > 0,
         fmt("max |row sum - 1| %.1e (<= %.0e); query span %d neighbor weight exceeds the rest by %.4f; property "
             "holds for %d of %d queries",
             row_err, kRowSumTol, page.vertices[query].span_id, qm ? *qm : 0.0, holds, eligible));
}

// --- 7 ----------------------------------------------------------------------

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "spanflow");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::map<std::string, std::string> pipeline_outputs(const fs::path& dir) {
  fs::create_directories(dir);
  const std::string corpus = (dir / "corpus").string(), ck = (dir / "model.json").string();
  const std::string log = (dir / "train.log.jsonl").string(), rep = (dir / "report.json").string();
  std::map<std::string, std::string> files;
  if (run_cli({"synth", "--output", corpus, "--seed", "5", "--pages", "6", "--rows-min", "4", "--rows-max", "10"}) != 0)
    return files;
  if (run_cli({"train", "--corpus", corpus, "--output", ck, "--log", log, "--seed", "6", "--dim", "16", "--heads", "2",
               "--layers", "2", "--order", "3", "--epochs", "3", "--folds", "2", "--learning-rate", "1e-3"}) != 0)
    return files;
  if (run_cli({"eval", "--checkpoint", ck, "--corpus", corpus, "--output", rep}) != 0) return files;
  for (const auto& e : fs::directory_iterator(corpus))
    if (e.path().filename().string().find("labels") != std::string::npos || e.path().filename() == "manifest.json")
      files[e.path().filename().string()] = read_file(e.path());
  files["train.log.jsonl"] = read_file(log);
  files["report.json"] = read_file(rep);
  return files;
}

void criterion_determinism() {
  const fs::path root = fs::temp_directory_path() / ("spanflow_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const auto a = pipeline_outputs(root / "a");
  const auto b = pipeline_outputs(root / "b");
  fs::remove_all(root);
  int label_files = 0, differing = 0;
  for (const auto& [name, bytes] : a) {
    label_files += name.find("labels") != std::string::npos;
    auto it = b.find(name);
    if (it == b.end() || it->second != bytes) ++differing;
  }
  const bool complete = label_files > 0 && a.count("train.log.jsonl") && a.count("report.json") && a.size() == b.size();
  report(7, complete && differing == 0,
         fmt("%zu files compared (%d label files, loss trace, report), %d differ", a.size(), label_files, differing));
}

// --- 8 ----------------------------------------------------------------------

double scan_score(const MatrixXd& p1, const MatrixXd& p2, const std::vector<std::pair<int, int>>& pairs, int k) {
  long hits = 0;
  for (auto [a, t] : pairs) {
    const double dt = (p1.row(a) - p2.row(t)).norm();
    int rank = 0;
    for (int j = 0; j < p2.rows(); ++j) {
      const double dj = (p1.row(a) - p2.row(j)).norm();
      if (dj < dt || (dj == dt && j < t)) ++rank;
    }
    hits += rank < k;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

// Signed (vertical, horizontal) displacements realised by some shortest path
// from s to t.
using Disp = std::set<std::pair<int, int>>;

std::vector<Disp> shortest_displacements(const graph::PageGraph& g, const std::vector<std::vector<int>>& d, int t) {
  const int n = g.size();
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return d[a][t] < d[b][t]; });
  std::vector<Disp> s(n);
  for (int u : order) {
    if (d[u][t] >= testsupport::kFwInf) continue;
    if (u == t) {
      s[u].insert({0, 0});
      continue;
    }
    for (auto dir : graph::kDirections) {
      const int v = g.neighbor(u, dir);
      if (v < 0 || d[v][t] != d[u][t] - 1) continue;
      const int dv = dir == graph::Direction::Up ? -1 : dir == graph::Direction::Down ? 1 : 0;
      const int dh = dir == graph::Direction::Left ? -1 : dir == graph::Direction::Right ? 1 : 0;
      for (auto [a, b] : s[v]) s[u].insert({a + dv, b + dh});
    }
  }
  return s;
}

void criterion_oracles() {
  Rng rng(81);
  // pairing score against an exhaustive scan
  const MatrixXd p1 = testsupport::random_matrix(kScanEmbeddings, 8, rng);
  MatrixXd p2 = testsupport::random_matrix(kScanEmbeddings, 8, rng);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < kScanEmbeddings; ++i) {
    const int t = static_cast<int>(rng.below(kScanEmbeddings));
    if (i % 2 == 0) p2.row(t) = p1.row(i) + 0.4 * testsupport::random_matrix(1, 8, rng);
    pairs.emplace_back(i, t);
  }
  int score_mismatch = 0;
  for (int k : {1, 3, 5, 10, 50}) score_mismatch += eval::pairing_score(p1, p2, pairs, k) != scan_score(p1, p2, pairs, k);

  // hop matrices against all-pairs shortest paths
  int hop_bad = 0, graphs = 0;
  long checked = 0;
  while (graphs < kHopGraphs) {
    const auto g = grid_graph(rng.range(2, 7), rng.range(2, 6), 0.25, rng);
    if (g.size() == 0) continue;
    ++graphs;
    const auto& h = g.require_hops();
    const auto d = testsupport::floyd_warshall(g);
    for (int t = 0; t < g.size(); ++t) {
      const auto disp = shortest_displacements(g, d, t);
      for (int s = 0; s < g.size(); ++s) {
        ++checked;
        const bool reach = d[s][t] < testsupport::kFwInf;
        if (h.reachable(s, t) != reach) {
          ++hop_bad;
          continue;
        }
        if (reach && !disp[s].count({h.vert(s, t), h.hor(s, t)})) ++hop_bad;
      }
    }
  }

  // block-diagonal forward against per-graph forward
  gnn::ModelConfig cfg;
  cfg.dim = 16;
  cfg.heads = 4;
  cfg.layers = 3;
  cfg.order = 3;
  cfg.regularization = true;
  const auto stack = gnn::init_stack(cfg, 82);
  double block_rel = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto g1 = grid_graph(rng.range(2, 6), rng.range(2, 5), 0.2, rng);
    const auto g2 = grid_graph(rng.range(2, 6), rng.range(2, 5), 0.2, rng);
    const MatrixXd x = testsupport::random_matrix(g1.size() + g2.size(), cfg.dim, rng);
    const MatrixXd joint = gnn::forward(gnn::make_masks(graph::bind_pair(g1, g2), cfg), x, stack, cfg).embeddings;
    const MatrixXd a = gnn::forward(gnn::make_masks(g1, cfg), x.topRows(g1.size()), stack, cfg).embeddings;
    const MatrixXd b = gnn::forward(gnn::make_masks(g2, cfg), x.bottomRows(g2.size()), stack, cfg).embeddings;
    MatrixXd sep(joint.rows(), joint.cols());
    sep << a, b;
    block_rel = std::max(block_rel, (joint - sep).cwiseAbs().maxCoeff() / sep.cwiseAbs().maxCoeff());
  }
  report(8, score_mismatch == 0 && hop_bad == 0 && block_rel <= kBlockRelTol,
         fmt("pairing score mismatches %d over 5 cut-offs; hop mismatches %d of %ld pairs on %d graphs; block "
             "forward relative gap %.1e (<= %.0e)",
             score_mismatch, hop_bad, checked, graphs, block_rel, kBlockRelTol));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  try {
    criterion_gradients();
    criterion_mechanism();
    const auto p = build_protocol();
    std::printf("  retrieval corpus: %d train pairs, %d held out, vocabulary %d rows\n", kTrainPairs, kHeldOutPairs,
                p.vocab.rows());
    const auto m8 = train_order(p, 8);
    criterion_retrieval(m8);
    const auto m5 = train_order(p, 5);
    const auto m1 = train_order(p, 1);
    criterion_ablation(m8, m5, m1);
    criterion_compositionality(p, m8, m5, m1);
    criterion_rollout(m8);
    criterion_determinism();
    criterion_oracles();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d of 8 criteria failed, %.0f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
