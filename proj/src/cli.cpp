#include "tagx/cli.hpp"

#include "tagx/backend.hpp"
#include "tagx/checkpoint.hpp"
#include "tagx/eval.hpp"
#include "tagx/explain.hpp"
#include "tagx/gcn.hpp"
#include "tagx/graph.hpp"
#include "tagx/projector.hpp"
#include "tagx/prompt.hpp"
#include "tagx/synthetic.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace tagx::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct DatasetOptions {
  std::string dir;
  std::string name;
  std::size_t max_nodes = 0;
};

struct BackendOptions {
  std::string selection = "mock";
  std::size_t mock_dim = 0;  // 0: projector token dim, else 64
  double theta = 0.5;
  std::uint64_t mock_seed = 0;
  std::vector<NodeId> hallucinate;
};

struct Options {
  DatasetOptions data;
  BackendOptions backend;
  std::string out = "out";
  std::string gnn;
  std::string projector;
  std::string templates;
  std::uint64_t seed = 0;

  TrainConfig gcn;
  ProjectorTrainConfig proj;
  std::string proj_kind = "mlp";

  std::vector<NodeId> nodes;
  std::string mode = "soft";
  bool no_post = false;
  std::optional<double> p;
  int depth = 2;
  bool include_text = false;
  bool with_repetitions = false;
  std::size_t max_tokens = 4096;

  std::vector<std::string> methods = {"node", "random(0.5)", "random(0.25)"};
  std::size_t num_targets = 0;
  std::uint64_t target_seed = 0;
  std::vector<std::uint64_t> random_seeds = {0, 1, 2, 3, 4};
  std::size_t workers = 1;

  std::string explanation;

  GradCheckConfig grad;
  std::string grad_kind = "mlp";

  SyntheticConfig synthetic;
};

void add_dataset(CLI::App* sub, Options& o, bool required = true) {
  auto* opt = sub->add_option("--dataset,-d", o.data.dir, "Dataset directory (meta.json, nodes.jsonl, edges.tsv)")
                  ->check(CLI::ExistingDirectory);
  if (required) opt->required();
  sub->add_option("--name", o.data.name, "Dataset name override");
  sub->add_option("--max-nodes", o.data.max_nodes, "Keep only nodes with id < N (0 keeps all)");
}

void add_backend(CLI::App* sub, Options& o) {
  sub->add_option("--backend", o.backend.selection, "mock, or the base URL of a model server");
  sub->add_option("--mock-dim", o.backend.mock_dim, "Mock embedding width h (0 follows the projector, else 64)");
  sub->add_option("--theta", o.backend.theta, "Mock support threshold on cosine similarity");
  sub->add_option("--mock-seed", o.backend.mock_seed, "Mock hashing seed");
  sub->add_option("--hallucinate", o.backend.hallucinate, "Mock: extra node ids named in every response");
}

void add_out(CLI::App* sub, Options& o) { sub->add_option("--out,-o", o.out, "Output directory"); }

void add_checkpoints(CLI::App* sub, Options& o, bool projector) {
  sub->add_option("--gnn", o.gnn, "GCN checkpoint (default <out>/<dataset>.gcn.json)");
  if (projector) sub->add_option("--projector", o.projector, "Projector checkpoint (default <out>/<dataset>.proj.json)");
}

void add_explain(CLI::App* sub, Options& o) {
  sub->add_option("--mode", o.mode, "Prompt payloads: soft or text")->check(CLI::IsMember({"soft", "text"}));
  sub->add_option("--p", o.p, "Explanation size ratio in (0, 1]");
  sub->add_option("--depth", o.depth, "Computation tree depth")->check(CLI::PositiveNumber);
  sub->add_flag("--include-text", o.include_text, "Append raw node text after each soft segment");
  sub->add_flag("--tree-size-with-repetitions", o.with_repetitions, "Measure tree size over walks, not unique nodes");
  sub->add_option("--max-tokens", o.max_tokens, "Generation budget")->check(CLI::PositiveNumber);
  sub->add_option("--templates", o.templates, "Prompt template directory");
}

TextAttributedGraph load_dataset(const Options& o) {
  LoadOptions lo;
  if (o.data.max_nodes) lo.max_nodes = o.data.max_nodes;
  return load_tag_dataset(o.data.dir, o.data.name, lo);
}

fs::path default_path(const Options& o, const std::string& explicit_path, const TextAttributedGraph& g,
                      const std::string& suffix) {
  fs::path p = explicit_path.empty() ? fs::path(o.out) / (g.name() + suffix) : fs::path(explicit_path);
  if (!fs::exists(p)) throw UsageError("checkpoint not found: " + p.string());
  return p;
}

std::unique_ptr<LlmBackend> open_backend(const Options& o, std::size_t projector_dim) {
  MockOptions m;
  m.dim = o.backend.mock_dim ? o.backend.mock_dim : (projector_dim ? projector_dim : 64);
  m.theta = o.backend.theta;
  m.seed = o.backend.mock_seed;
  m.hallucinate_ids = o.backend.hallucinate;
  return make_backend(o.backend.selection, m);
}

PromptTemplate template_for(const Options& o, const TextAttributedGraph& g) {
  return find_template(o.templates.empty() ? bundled_template_dir() : fs::path(o.templates), g.name());
}

ExplainConfig explain_config(const Options& o) {
  ExplainConfig c;
  c.tree_depth = o.depth;
  c.mode = prompt_mode_from_string(o.mode);
  c.post_processing = !o.no_post;
  c.p = o.p.value_or(0.5);
  c.seed = o.seed;
  c.include_text_in_soft_mode = o.include_text;
  c.tree_size_with_repetitions = o.with_repetitions;
  c.generation.max_tokens = o.max_tokens;
  return c;
}

/// Every option of the subcommand with its resolved value.
json resolved_config(const CLI::App* sub) {
  json out = json::object();
  out["subcommand"] = sub->get_name();
  for (const CLI::Option* opt : sub->get_options()) {
    std::string key = opt->get_single_name();
    if (key.empty() || key == "help" || key == "config") continue;
    auto values = opt->reduced_results();
    if (values.empty()) {
      const auto d = opt->get_default_str();
      if (d.empty() || d == "[]") {
        out[key] = nullptr;
        continue;
      }
      out[key] = d;
    } else if (values.size() == 1) {
      out[key] = values.front();
    } else {
      out[key] = values;
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

TextEmbeddingTable embed_texts(const TextAttributedGraph& g, const LlmBackend& backend) {
  const auto d = backend.descriptor();
  TextEmbeddingTable t;
  t.backend_id = d.id;
  t.vectors.resize(static_cast<Eigen::Index>(g.num_nodes()), static_cast<Eigen::Index>(d.embedding_dim));
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    t.vectors.row(static_cast<Eigen::Index>(v)) = backend.embed_text(g.text(static_cast<NodeId>(v))).transpose();
  }
  t.validate();
  return t;
}

int run_ingest_check(const Options& o, const json& echo) {
  const auto g = load_dataset(o);
  const auto& st = g.ingest_stats();
  std::size_t isolated = 0;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) isolated += g.degree(static_cast<NodeId>(v)) == 0;
  json summary = {{"dataset", g.name()},
                  {"nodes", g.num_nodes()},
                  {"edges", g.num_edges()},
                  {"input_edges", st.input_edges},
                  {"self_loops_removed", st.self_loops_removed},
                  {"duplicates_removed", st.duplicates_removed},
                  {"classes", g.num_classes()},
                  {"feature_dim", g.feature_dim()},
                  {"isolated_nodes", isolated},
                  {"train", g.splits().train.size()},
                  {"val", g.splits().val.size()},
                  {"test", g.splits().test.size()},
                  {"config", echo}};
  checkpoint::write_json(fs::path(o.out) / (g.name() + ".ingest.json"), summary);
  std::printf("%s: %zu nodes, %zu edges (%zu input lines, %zu self-loops, %zu duplicates), %zu classes, d=%zu\n",
              g.name().c_str(), g.num_nodes(), g.num_edges(), st.input_edges, st.self_loops_removed,
              st.duplicates_removed, g.num_classes(), g.feature_dim());
  return 0;
}

int run_train_gnn(Options o, const json& echo) {
  const auto g = load_dataset(o);
  o.gcn.seed = o.seed;
  const auto res = train_gcn(g, o.gcn);
  const fs::path path = o.gnn.empty() ? fs::path(o.out) / (g.name() + ".gcn.json") : fs::path(o.gnn);
  json meta = echo;
  meta["train_accuracy"] = res.train_accuracy;
  meta["val_accuracy"] = res.val_accuracy;
  meta["test_accuracy"] = res.test_accuracy;
  save_gcn(res.model, path, meta);
  std::printf("train %.4f  val %.4f  test %.4f  -> %s\n", res.train_accuracy, res.val_accuracy, res.test_accuracy,
              path.string().c_str());
  return 0;
}

int run_train_projector(Options o, const json& echo) {
  const auto g = load_dataset(o);
  const auto gnn = load_gcn(default_path(o, o.gnn, g, ".gcn.json"));
  auto backend = open_backend(o, 0);
  EmbeddingTable emb{gcn_forward(gnn, g).embeddings, "gcn"};
  const auto texts = embed_texts(g, *backend);
  o.proj.seed = o.seed;
  o.proj.kind = o.proj_kind == "linear" ? ProjectorKind::linear : ProjectorKind::mlp;
  const auto res = train_projector(g, emb, texts, o.proj);
  const fs::path path = o.projector.empty() ? fs::path(o.out) / (g.name() + ".proj.json") : fs::path(o.projector);
  json meta = echo;
  meta["backend"] = descriptor_to_json(backend->descriptor());
  meta["initial_loss"] = {{"context", res.initial_loss.context}, {"contrast", res.initial_loss.contrast}, {"total", res.initial_loss.total}};
  meta["final_loss"] = {{"context", res.final_loss.context}, {"contrast", res.final_loss.contrast}, {"total", res.final_loss.total}};
  meta["best_epoch"] = res.best_epoch;
  save_projector(res.model, path, meta);
  std::printf("loss %.6f -> %.6f (context %.4f -> %.4f, contrast %.4f -> %.4f), best epoch %d -> %s\n",
              res.initial_loss.total, res.final_loss.total, res.initial_loss.context, res.final_loss.context,
              res.initial_loss.contrast, res.final_loss.contrast, res.best_epoch, path.string().c_str());
  return 0;
}

int run_explain(const Options& o, const json& echo) {
  const auto g = load_dataset(o);
  const auto gnn = load_gcn(default_path(o, o.gnn, g, ".gcn.json"));
  const auto cfg = explain_config(o);
  std::optional<ProjectorModel> proj;
  if (cfg.mode == PromptMode::soft) proj = load_projector(default_path(o, o.projector, g, ".proj.json"));
  auto backend = open_backend(o, proj ? proj->token_dim : 0);
  const Explainer ex(g, gnn, proj ? &*proj : nullptr, *backend, template_for(o, g), cfg);

  std::vector<NodeId> nodes = o.nodes;
  if (nodes.empty()) nodes = g.splits().test;
  for (NodeId v : nodes) {
    const auto e = ex.explain(v);
    json j = explanation_to_json(e);
    j["config"] = echo;
    checkpoint::write_json(fs::path(o.out) / (std::to_string(v) + ".expl.json"), j);
    write_text(fs::path(o.out) / (std::to_string(v) + ".prompt.txt"), e.prompt_text);
    std::printf("node %lld: |S_v|=%zu of tree %zu (supporters %zu, opposing %zu, neutral %zu, dropped %zu)\n",
                static_cast<long long>(v), e.s_v.size(), e.tree_size, e.s_plus.size(), e.s_minus.size(),
                e.s_zero.size(), e.dropped_hallucinations.size());
  }
  return 0;
}

int run_evaluate(const Options& o, const json& echo) {
  const auto g = load_dataset(o);
  const fs::path gnn_path = default_path(o, o.gnn, g, ".gcn.json");
  const auto gnn = load_gcn(gnn_path);

  BenchmarkConfig b;
  for (const auto& m : o.methods) b.methods.push_back(parse_method(m));
  b.num_targets = o.num_targets;
  b.target_seed = o.target_seed;
  b.random_seeds = o.random_seeds;
  b.explain = explain_config(o);
  b.p = o.p;
  b.workers = o.workers;
  b.gnn_checkpoint = gnn_path.filename().string();
  b.echo = echo;

  bool needs_backend = false, needs_projector = false;
  for (const auto& m : b.methods) {
    needs_backend |= m.uses_backend();
    needs_projector |= m.kind == MethodKind::llm_pr || m.kind == MethodKind::llm_pr_po;
  }
  std::optional<ProjectorModel> proj;
  if (needs_projector) proj = load_projector(default_path(o, o.projector, g, ".proj.json"));
  std::unique_ptr<LlmBackend> backend;
  if (needs_backend) backend = open_backend(o, proj ? proj->token_dim : 0);
  if (proj) {
    b.echo["projector"] = {{"k", proj->tokens}, {"h", proj->token_dim}, {"beta", proj->beta}, {"tau", proj->tau}};
  }
  if (needs_backend && o.backend.selection == "mock") b.echo["theta"] = o.backend.theta;

  const auto report = run_benchmark(g, gnn, proj ? &*proj : nullptr, backend.get(), template_for(o, g), b);
  write_report(report, o.out);
  std::cout << report_to_markdown(report);
  if (!report.all_methods_succeeded()) {
    std::fprintf(stderr, "error: at least one method produced no successful target\n");
    return 1;
  }
  return 0;
}

int run_export_dot(const Options& o) {
  const auto g = load_dataset(o);
  const json j = checkpoint::read_json(o.explanation);
  Explanation e;
  try {
    e.target = j.at("target").get<NodeId>();
    e.s_plus = j.at("S_plus").get<NodeSet>();
    e.s_minus = j.at("S_minus").get<NodeSet>();
    e.s_zero = j.at("S_zero").get<NodeSet>();
    e.s_v = j.at("S_v").get<NodeSet>();
  } catch (const json::exception& ex) {
    throw DataError("malformed explanation file " + o.explanation + ": " + ex.what());
  }
  e.subgraph = induced_subgraph(g, e.s_v);
  const fs::path path = fs::path(o.out) / (std::to_string(e.target) + ".dot");
  write_text(path, explanation_to_dot(e, g));
  std::printf("%s: %zu nodes, %zu edges\n", path.string().c_str(), e.subgraph.graph.num_nodes(),
              e.subgraph.graph.num_edges());
  return 0;
}

int run_grad_check(Options o) {
  o.grad.seed = o.seed;
  o.grad.kind = o.grad_kind == "linear" ? ProjectorKind::linear : ProjectorKind::mlp;
  SyntheticConfig sc;
  sc.name = "grad_check";
  sc.num_nodes = 6;
  sc.num_classes = 2;
  sc.vocabulary = 6;
  sc.words_per_node = 4;
  sc.num_edges = 7;
  sc.seed = o.seed;
  const auto g = make_synthetic_graph(sc);
  const auto rep = grad_check(o.grad, g);
  const bool ok = rep.max_relative_error < 1e-4;
  std::printf("max relative error %.3e over %zu parameters (worst %s): %s\n", rep.max_relative_error,
              rep.parameters_checked, rep.worst_parameter.c_str(), ok ? "ok" : "FAILED");
  return ok ? 0 : 1;
}

int run_make_synthetic(Options o) {
  o.synthetic.seed = o.seed;
  const auto g = make_synthetic_graph(o.synthetic);
  write_tag_dataset(g, o.out);
  std::printf("%s: %zu nodes, %zu edges -> %s\n", g.name().c_str(), g.num_nodes(), g.num_edges(), o.out.c_str());
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Explain GNN node predictions on text-attributed graphs with a language model", "tagx"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML config file; flags override it");
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  Options o;

  auto* ingest = app.add_subcommand("ingest-check", "Load a dataset, validate it and print its statistics");
  add_dataset(ingest, o);
  add_out(ingest, o);

  auto* tg = app.add_subcommand("train-gnn", "Train the three-layer GCN");
  add_dataset(tg, o);
  add_out(tg, o);
  tg->add_option("--gnn", o.gnn, "Output checkpoint (default <out>/<dataset>.gcn.json)");
  tg->add_option("--seed", o.seed, "Initialization seed");
  tg->add_option("--epochs", o.gcn.epochs, "Training epochs")->check(CLI::PositiveNumber);
  tg->add_option("--lr", o.gcn.learning_rate, "Adam learning rate");
  tg->add_option("--hidden", o.gcn.hidden_dim, "Hidden width (0: 512 for d >= 1000, else 64)");

  auto* tp = app.add_subcommand("train-projector", "Train the embedding-to-soft-prompt projector");
  add_dataset(tp, o);
  add_out(tp, o);
  add_backend(tp, o);
  tp->add_option("--gnn", o.gnn, "GCN checkpoint (default <out>/<dataset>.gcn.json)");
  tp->add_option("--projector", o.projector, "Output checkpoint (default <out>/<dataset>.proj.json)");
  tp->add_option("--seed", o.seed, "Initialization and shuffling seed");
  tp->add_option("--tokens,-k", o.proj.tokens, "Soft-prompt tokens per node")->check(CLI::PositiveNumber);
  tp->add_option("--beta", o.proj.beta, "Weight of the context term");
  tp->add_option("--tau", o.proj.tau, "Temperature of the GNN similarity softmax");
  tp->add_option("--lr", o.proj.learning_rate, "Adam learning rate");
  tp->add_option("--epochs", o.proj.epochs, "Training epochs")->check(CLI::PositiveNumber);
  tp->add_option("--batch", o.proj.batch, "Mini-batch size")->check(CLI::Range(2, 1 << 20));
  tp->add_flag("--shared-temperature", o.proj.shared_temperature, "Apply tau to the soft-prompt similarities too");
  tp->add_option("--kind", o.proj_kind, "mlp or linear")->check(CLI::IsMember({"mlp", "linear"}));

  auto* ex = app.add_subcommand("explain", "Explain the prediction for one or more nodes");
  add_dataset(ex, o);
  add_out(ex, o);
  add_backend(ex, o);
  add_checkpoints(ex, o, true);
  add_explain(ex, o);
  ex->add_option("--node,-n", o.nodes, "Target node ids (default: the test split)");
  ex->add_flag("--no-post-processing", o.no_post, "Skip neutral padding");
  ex->add_option("--seed", o.seed, "Padding seed");

  auto* ev = app.add_subcommand("evaluate", "Benchmark explainers and write report.json / report.md");
  add_dataset(ev, o);
  add_out(ev, o);
  add_backend(ev, o);
  add_checkpoints(ev, o, true);
  add_explain(ev, o);
  ev->add_option("--methods", o.methods, "node, random(q), llm_text, llm_pr, llm_pr_po")->delimiter(',');
  ev->add_option("--num-targets", o.num_targets, "Evaluate a seeded subsample of the test split (0: all)");
  ev->add_option("--target-seed", o.target_seed, "Subsampling seed");
  ev->add_option("--random-seeds", o.random_seeds, "Seeds averaged by the random baseline")->delimiter(',');
  ev->add_option("--workers", o.workers, "Parallel targets")->check(CLI::PositiveNumber);
  ev->add_option("--seed", o.seed, "Padding seed for the LLM methods");

  auto* dot = app.add_subcommand("export-dot", "Render an explanation file as Graphviz DOT");
  add_dataset(dot, o);
  add_out(dot, o);
  dot->add_option("--explanation,-e", o.explanation, "<node>.expl.json")->required()->check(CLI::ExistingFile);

  auto* gc = app.add_subcommand("grad-check", "Compare projector gradients with finite differences");
  gc->add_option("--seed", o.seed, "Instance seed");
  gc->add_option("--beta", o.grad.beta, "Weight of the context term");
  gc->add_option("--tau", o.grad.tau, "Temperature");
  gc->add_option("--eps", o.grad.epsilon, "Finite-difference step");
  gc->add_option("--kind", o.grad_kind, "mlp or linear")->check(CLI::IsMember({"mlp", "linear"}));
  gc->add_flag("--shared-temperature", o.grad.shared_temperature, "Apply tau to the soft-prompt similarities too");

  auto* ms = app.add_subcommand("make-synthetic", "Write a synthetic homophilous dataset");
  add_out(ms, o);
  ms->add_option("--seed", o.seed, "Generator seed");
  ms->add_option("--nodes", o.synthetic.num_nodes, "Node count");
  ms->add_option("--classes", o.synthetic.num_classes, "Class count");
  ms->add_option("--vocabulary", o.synthetic.vocabulary, "Feature dimension");
  ms->add_option("--words", o.synthetic.words_per_node, "Words per node");
  ms->add_option("--edges", o.synthetic.num_edges, "Edge count");
  ms->add_option("--homophily", o.synthetic.homophily, "Probability that an edge joins same-class nodes");
  ms->add_option("--signal", o.synthetic.signal, "Probability that a word comes from the node's class block");
  ms->add_option("--name", o.synthetic.name, "Dataset name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  CLI::App* sub = app.get_subcommands().front();
  const json echo = resolved_config(sub);
  try {
    const std::string name = sub->get_name();
    if (name == "ingest-check") return run_ingest_check(o, echo);
    if (name == "train-gnn") return run_train_gnn(o, echo);
    if (name == "train-projector") return run_train_projector(o, echo);
    if (name == "explain") return run_explain(o, echo);
    if (name == "evaluate") return run_evaluate(o, echo);
    if (name == "export-dot") return run_export_dot(o);
    if (name == "grad-check") return run_grad_check(o);
    if (name == "make-synthetic") return run_make_synthetic(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const StageError& e) {
    std::fprintf(stderr, "error [%s]: %s\n", e.stage().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [%s]: %s\n", sub->get_name().c_str(), e.what());
    return 1;
  }
  return 2;
}

}  // namespace tagx::cli
