#include "tagx/eval.hpp"

#include "tagx/checkpoint.hpp"
#include "tagx/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <regex>
#include <sstream>
#include <thread>

namespace tagx {

using nlohmann::json;

bool faithful(const GcnModel& gnn, const TextAttributedGraph& g, NodeId v, const NodeSet& s,
              const std::vector<int>& reference) {
  if (!s.count(v)) throw Error("explanation for " + std::to_string(v) + " does not contain its target");
  const Subgraph sub = induced_subgraph(g, s);
  return predict(gnn, sub.graph, sub.local_id(v)) == reference.at(static_cast<std::size_t>(v));
}

double fidelity(const GcnModel& gnn, const TextAttributedGraph& g, const std::map<NodeId, NodeSet>& results,
                const std::vector<int>& reference) {
  if (results.empty()) throw Error("fidelity of an empty result set");
  std::size_t agree = 0;
  for (const auto& [v, s] : results) agree += faithful(gnn, g, v, s, reference) ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(results.size());
}

double fidelity(const GcnModel& gnn, const TextAttributedGraph& g, const std::map<NodeId, NodeSet>& results) {
  return fidelity(gnn, g, results, predict_all(gnn, g));
}

double avg_size(const std::map<NodeId, NodeSet>& results) {
  if (results.empty()) throw Error("avg_size of an empty result set");
  double total = 0.0;
  for (const auto& [v, s] : results) total += static_cast<double>(s.size());
  return total / static_cast<double>(results.size());
}

NodeSet baseline_node(const TextAttributedGraph& g, NodeId v) {
  g.check_node(v);
  return {v};
}

NodeSet baseline_random(const TextAttributedGraph& g, NodeId v, double q, int tree_depth, std::uint64_t seed) {
  if (!(q > 0.0 && q <= 1.0)) throw Error("random baseline fraction must lie in (0, 1]");
  std::vector<NodeId> pool;
  for (NodeId u : tree_unique_nodes(g, v, tree_depth)) {
    if (u != v) pool.push_back(u);
  }
  const auto k = static_cast<std::size_t>(std::lround(q * static_cast<double>(pool.size())));
  Rng rng(seed);
  NodeSet out{v};
  for (NodeId u : rng.sample(std::move(pool), k)) out.insert(u);
  return out;
}

std::string MethodSpec::name() const {
  switch (kind) {
    case MethodKind::node: return "node";
    case MethodKind::random: {
      char buf[48];
      std::snprintf(buf, sizeof buf, "random(%g)", q);
      return buf;
    }
    case MethodKind::llm_text: return "llm_text";
    case MethodKind::llm_pr: return "llm_pr";
    case MethodKind::llm_pr_po: return "llm_pr_po";
  }
  return "?";
}

MethodSpec parse_method(const std::string& raw) {
  std::string s;
  for (char c : raw) {
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  }
  if (s == "node") return {MethodKind::node, 0.0};
  if (s == "llm_text") return {MethodKind::llm_text, 0.0};
  if (s == "llm_pr") return {MethodKind::llm_pr, 0.0};
  if (s == "llm_pr_po") return {MethodKind::llm_pr_po, 0.0};
  if (s == "random") return {MethodKind::random, 0.5};
  static const std::regex random_re(R"(random\(([0-9]*\.?[0-9]+)(%?)\))");
  std::smatch m;
  if (std::regex_match(s, m, random_re)) {
    double q = std::stod(m[1].str());
    if (m[2].length()) q /= 100.0;
    if (!(q > 0.0 && q <= 1.0)) throw Error("random(q) needs 0 < q <= 1, got '" + raw + "'");
    return {MethodKind::random, q};
  }
  throw Error("unknown method '" + raw + "' (expected node, random(q), llm_text, llm_pr or llm_pr_po)");
}

std::optional<double> reference_explanation_size(const std::string& dataset) {
  std::string key;
  for (char c : dataset) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key == "cora") return 17.4;
  if (key == "wikics") return 8.9;
  if (key == "liar") return 10.3;
  if (key == "amazon") return 1.30;
  return std::nullopt;
}

void BenchmarkConfig::validate() const {
  if (methods.empty()) throw Error("no methods requested");
  if (random_seeds.empty()) throw Error("random baseline needs at least one seed");
  if (workers < 1) throw Error("workers must be >= 1");
  if (p && !(*p > 0.0 && *p <= 1.0)) throw Error("p must lie in (0, 1]");
  explain.validate();
}

bool EvalReport::all_methods_succeeded() const {
  return std::all_of(rows.begin(), rows.end(), [](const MethodRow& r) { return r.successes > 0; });
}

std::vector<NodeId> evaluation_targets(const TextAttributedGraph& g, const BenchmarkConfig& cfg, bool include_dummy) {
  std::vector<NodeId> targets;
  const auto dummy = g.dummy_label();
  for (NodeId v : g.splits().test) {
    if (!include_dummy && dummy && g.label(v) == *dummy) continue;
    targets.push_back(v);
  }
  std::sort(targets.begin(), targets.end());
  if (cfg.num_targets > 0 && cfg.num_targets < targets.size()) {
    Rng rng(cfg.target_seed);
    targets = rng.sample(std::move(targets), cfg.num_targets);
    std::sort(targets.begin(), targets.end());
  }
  return targets;
}

namespace {

/// Runs fn(i) for i in [0, n) on up to `workers` threads; each index is
/// claimed in order from a shared counter.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct Outcome {
  bool ok = false;
  bool faithful = false;
  std::size_t size = 0;
  std::string error;
};

struct Summary {
  double fidelity = 0.0;
  double size = 0.0;
  std::size_t successes = 0;
  std::vector<TargetFailure> failures;
};

Summary summarize(const std::vector<NodeId>& targets, const std::vector<Outcome>& outcomes) {
  Summary s;
  std::size_t agree = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!outcomes[i].ok) {
      s.failures.push_back({targets[i], outcomes[i].error});
      continue;
    }
    ++s.successes;
    agree += outcomes[i].faithful ? 1 : 0;
    total += static_cast<double>(outcomes[i].size);
  }
  if (s.successes) {
    s.fidelity = static_cast<double>(agree) / static_cast<double>(s.successes);
    s.size = total / static_cast<double>(s.successes);
  }
  return s;
}

double mean_of(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

EvalReport run_benchmark(const TextAttributedGraph& g, const GcnModel& gnn, const ProjectorModel* projector,
                         const LlmBackend* backend, const PromptTemplate& tmpl, const BenchmarkConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();

  bool needs_backend = false;
  bool needs_projector = false;
  for (const auto& m : cfg.methods) {
    needs_backend |= m.uses_backend();
    needs_projector |= m.kind == MethodKind::llm_pr || m.kind == MethodKind::llm_pr_po;
  }
  if (needs_backend && !backend) throw Error("LLM methods need a backend");
  if (needs_projector && !projector) throw Error("llm_pr and llm_pr_po need a trained projector");

  std::vector<std::pair<std::string, std::vector<NodeId>>> populations;
  if (g.dummy_label()) {
    populations.emplace_back("labeled", evaluation_targets(g, cfg, false));
    populations.emplace_back("all", evaluation_targets(g, cfg, true));
  } else {
    populations.emplace_back("test", evaluation_targets(g, cfg, false));
  }
  if (populations.front().second.empty()) throw Error("no evaluation targets in the test split");

  // p from the reference size over the primary population's mean tree size.
  double p = 0.5;
  double mean_tree = 0.0;
  {
    const auto& targets = populations.front().second;
    for (NodeId v : targets) mean_tree += static_cast<double>(tree_unique_nodes(g, v, cfg.explain.tree_depth).size());
    mean_tree /= static_cast<double>(targets.size());
  }
  std::string p_source = "default";
  if (cfg.p) {
    p = *cfg.p;
    p_source = "configured";
  } else if (const auto ref = reference_explanation_size(g.name())) {
    p = std::clamp(*ref / mean_tree, 1e-9, 1.0);
    p_source = "reference size " + json(*ref).dump() + " / mean tree size";
  }

  const std::vector<int> reference = predict_all(gnn, g);
  std::optional<Explainer> explainer;
  if (needs_backend) explainer.emplace(g, gnn, needs_projector ? projector : nullptr, *backend, tmpl, cfg.explain);

  EvalReport report;
  report.dataset = g.name();
  report.gnn_checkpoint = cfg.gnn_checkpoint;

  for (const auto& [population, targets] : populations) {
    for (const auto& method : cfg.methods) {
      MethodRow row;
      row.method = method.name();
      row.population = population;
      row.num_targets = targets.size();
      std::vector<Outcome> outcomes(targets.size());

      auto run = [&](std::size_t workers, const std::function<NodeSet(NodeId)>& explain) {
        parallel_for(targets.size(), workers, [&](std::size_t i) {
          Outcome o;
          try {
            const NodeSet s = explain(targets[i]);
            o.size = s.size();
            o.faithful = faithful(gnn, g, targets[i], s, reference);
            o.ok = true;
          } catch (const std::exception& ex) {
            o.error = ex.what();
          }
          outcomes[i] = std::move(o);
        });
      };

      if (method.kind == MethodKind::random) {
        std::vector<double> fids, sizes;
        Summary last;
        for (std::uint64_t seed : cfg.random_seeds) {
          run(cfg.workers, [&](NodeId v) {
            return baseline_random(g, v, method.q, cfg.explain.tree_depth, mix_seed(seed, static_cast<std::uint64_t>(v)));
          });
          last = summarize(targets, outcomes);
          if (last.successes) {
            fids.push_back(last.fidelity);
            sizes.push_back(last.size);
          }
        }
        row.seeds = cfg.random_seeds;
        row.successes = last.successes;
        row.failures = last.failures;
        if (!fids.empty()) {
          row.fidelity = mean_of(fids);
          row.fidelity_std = std_of(fids);
          row.size = mean_of(sizes);
          row.size_std = std_of(sizes);
        }
      } else {
        if (method.kind == MethodKind::node) {
          run(cfg.workers, [&](NodeId v) { return baseline_node(g, v); });
        } else {
          ExplainConfig ec = cfg.explain;
          ec.p = p;
          ec.mode = method.kind == MethodKind::llm_text ? PromptMode::text : PromptMode::soft;
          ec.post_processing = method.kind != MethodKind::llm_pr;
          const std::size_t workers = std::min(cfg.workers, backend->descriptor().max_concurrency);
          run(workers, [&](NodeId v) { return explainer->explain(v, ec).s_v; });
          row.seeds = {ec.seed};
        }
        const Summary s = summarize(targets, outcomes);
        row.successes = s.successes;
        row.failures = s.failures;
        row.fidelity = s.fidelity;
        row.size = s.size;
      }
      if (!row.failures.empty()) {
        spdlog::warn("{} [{}]: {} of {} targets failed (first: {})", row.method, population, row.failures.size(),
                     row.num_targets, row.failures.front().error);
      }
      report.rows.push_back(std::move(row));
    }
  }

  json config = cfg.echo;
  config["p"] = p;
  config["p_source"] = p_source;
  config["mean_tree_size"] = mean_tree;
  config["tree_depth"] = cfg.explain.tree_depth;
  config["num_targets"] = cfg.num_targets;
  config["target_seed"] = cfg.target_seed;
  config["random_seeds"] = cfg.random_seeds;
  config["workers"] = cfg.workers;
  config["explain"] = explain_config_to_json(cfg.explain);
  std::vector<std::string> names;
  for (const auto& m : cfg.methods) names.push_back(m.name());
  config["methods"] = names;
  if (backend) config["backend"] = descriptor_to_json(backend->descriptor());
  report.config = std::move(config);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

json report_to_json(const EvalReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json failures = json::array();
    for (const auto& f : row.failures) failures.push_back({{"target", f.target}, {"error", f.error}});
    const bool ok = row.successes > 0;
    rows.push_back({{"method", row.method},
                    {"population", row.population},
                    {"fidelity", ok ? json(row.fidelity) : json(nullptr)},
                    {"fidelity_std", ok ? json(row.fidelity_std) : json(nullptr)},
                    {"size", ok ? json(row.size) : json(nullptr)},
                    {"size_std", ok ? json(row.size_std) : json(nullptr)},
                    {"num_targets", row.num_targets},
                    {"successes", row.successes},
                    {"seeds", row.seeds},
                    {"failures", std::move(failures)}});
  }
  return {{"dataset", r.dataset}, {"gnn_checkpoint", r.gnn_checkpoint}, {"config", r.config}, {"rows", std::move(rows)}};
}

std::string report_to_markdown(const EvalReport& r) {
  std::ostringstream out;
  out << "# " << r.dataset << "\n\n";
  out << "| Method | Population | Fidelity | Size | Targets | Failures |\n";
  out << "|---|---|---|---|---|---|\n";
  char buf[64];
  for (const auto& row : r.rows) {
    out << "| " << row.method << " | " << row.population << " | ";
    if (row.successes == 0) {
      out << "n/a | n/a";
    } else {
      std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * row.fidelity);
      out << buf;
      if (row.seeds.size() > 1) {
        std::snprintf(buf, sizeof buf, " ± %.1f", 100.0 * row.fidelity_std);
        out << buf;
      }
      std::snprintf(buf, sizeof buf, " | %.2f", row.size);
      out << buf;
      if (row.seeds.size() > 1) {
        std::snprintf(buf, sizeof buf, " ± %.2f", row.size_std);
        out << buf;
      }
    }
    out << " | " << row.num_targets << " | " << row.failures.size() << " |\n";
  }
  std::snprintf(buf, sizeof buf, "%.4f", r.config.value("p", 0.0));
  out << "\np = " << buf << ", tree depth " << r.config.value("tree_depth", 0) << "\n";
  return out.str();
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  checkpoint::write_json(dir / "report.json", report_to_json(r));
  std::ofstream md(dir / "report.md");
  md << report_to_markdown(r);
  if (!md) throw Error("cannot write " + (dir / "report.md").string());
  checkpoint::write_json(dir / "report.meta.json", {{"wall_clock_seconds", r.wall_clock_seconds}});
}

}  // namespace tagx
