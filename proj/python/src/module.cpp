#include "tagx/cli.hpp"
#include "tagx/eval.hpp"
#include "tagx/synthetic.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace tagx;

namespace {

// Results cross the boundary as JSON text; the package decodes them.
std::string dump(const nlohmann::json& j) { return j.dump(); }

TextEmbeddingTable embed_all(const TextAttributedGraph& g, const LlmBackend& backend) {
  TextEmbeddingTable t;
  t.backend_id = backend.descriptor().id;
  t.vectors.resize(static_cast<Eigen::Index>(g.num_nodes()),
                   static_cast<Eigen::Index>(backend.descriptor().embedding_dim));
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    t.vectors.row(static_cast<Eigen::Index>(v)) = backend.embed_text(g.text(static_cast<NodeId>(v))).transpose();
  }
  t.validate();
  return t;
}

ProjectorKind kind_from(const std::string& s) {
  if (s == "mlp") return ProjectorKind::mlp;
  if (s == "linear") return ProjectorKind::linear;
  throw Error("unknown projector kind '" + s + "'");
}

}  // namespace

PYBIND11_MODULE(_tagx, m) {
  m.doc() = "Graph explanation toolkit bindings";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<BackendError>(m, "BackendError", error.ptr());
  py::register_exception<StageError>(m, "StageError", error.ptr());

  py::class_<TextAttributedGraph>(m, "Graph")
      .def_property_readonly("name", &TextAttributedGraph::name)
      .def_property_readonly("num_nodes", &TextAttributedGraph::num_nodes)
      .def_property_readonly("num_edges", &TextAttributedGraph::num_edges)
      .def_property_readonly("num_classes", &TextAttributedGraph::num_classes)
      .def_property_readonly("feature_dim", &TextAttributedGraph::feature_dim)
      .def_property_readonly("features", &TextAttributedGraph::features)
      .def_property_readonly("labels", &TextAttributedGraph::labels)
      .def_property_readonly("edges", &TextAttributedGraph::edges)
      .def_property_readonly("class_names", &TextAttributedGraph::class_names)
      .def_property_readonly("test_nodes", [](const TextAttributedGraph& g) { return g.splits().test; })
      .def("text", &TextAttributedGraph::text)
      .def("neighbors", &TextAttributedGraph::neighbors);

  m.def("load_dataset", [](const std::filesystem::path& dir, const std::string& name) {
    return load_tag_dataset(dir, name);
  }, py::arg("path"), py::arg("name") = "");
  m.def("write_dataset", &write_tag_dataset, py::arg("graph"), py::arg("path"));
  m.def("make_synthetic", [](std::uint64_t seed, std::size_t num_nodes, std::size_t num_classes) {
    SyntheticConfig c;
    c.seed = seed;
    c.num_nodes = num_nodes;
    c.num_classes = num_classes;
    return make_synthetic_graph(c);
  }, py::arg("seed") = 0, py::arg("num_nodes") = 60, py::arg("num_classes") = 3);
  m.def("make_two_cliques", &make_two_cliques, py::arg("clique_size") = 5);

  m.def("tree_unique_nodes", &tree_unique_nodes, py::arg("graph"), py::arg("node"), py::arg("depth") = 2);
  m.def("tree_walk_count", &tree_walk_count, py::arg("graph"), py::arg("node"), py::arg("depth") = 2);

  py::class_<GcnModel>(m, "GcnModel")
      .def_property_readonly("hidden_dim", &GcnModel::hidden_dim)
      .def_property_readonly("num_classes", &GcnModel::num_classes)
      .def("save", [](const GcnModel& g, const std::filesystem::path& p) { save_gcn(g, p); });
  m.def("load_gcn", &load_gcn, py::arg("path"));
  m.def("train_gcn", [](const TextAttributedGraph& g, int epochs, double lr, std::uint64_t seed, std::size_t hidden) {
    TrainConfig c;
    c.epochs = epochs;
    c.learning_rate = lr;
    c.seed = seed;
    c.hidden_dim = hidden;
    auto r = train_gcn(g, c);
    return py::make_tuple(std::move(r.model), r.test_accuracy);
  }, py::arg("graph"), py::arg("epochs") = 400, py::arg("lr") = 1e-3, py::arg("seed") = 0, py::arg("hidden") = 0);
  m.def("predict_all", &predict_all, py::arg("model"), py::arg("graph"));
  m.def("embeddings", [](const GcnModel& model, const TextAttributedGraph& g) { return gcn_forward(model, g).embeddings; },
        py::arg("model"), py::arg("graph"));

  py::class_<ProjectorModel>(m, "Projector")
      .def_property_readonly("tokens", [](const ProjectorModel& p) { return p.tokens; })
      .def_property_readonly("token_dim", [](const ProjectorModel& p) { return p.token_dim; })
      .def("project", [](const ProjectorModel& p, const Vector& f) { return project(p, f); });
  m.def("context_loss", &context_loss, py::arg("zbar"), py::arg("text"));
  m.def("contrastive_loss", &contrastive_loss, py::arg("zbar"), py::arg("gnn"), py::arg("tau"),
        py::arg("soft_temperature") = 1.0);
  m.def("grad_check", [](double beta, const std::string& kind, std::uint64_t seed) {
    GradCheckConfig c;
    c.beta = beta;
    c.kind = kind_from(kind);
    c.seed = seed;
    SyntheticConfig sc;
    sc.num_nodes = 6;
    sc.num_classes = 2;
    sc.vocabulary = 6;
    sc.words_per_node = 4;
    sc.num_edges = 7;
    sc.seed = seed;
    return grad_check(c, make_synthetic_graph(sc)).max_relative_error;
  }, py::arg("beta") = 0.5, py::arg("kind") = "mlp", py::arg("seed") = 0);

  py::class_<LlmBackend>(m, "Backend")
      .def("descriptor", [](const LlmBackend& b) { return dump(descriptor_to_json(b.descriptor())); })
      .def("embed_text", &LlmBackend::embed_text);
  m.def("make_backend", [](const std::string& selection, std::size_t dim, double theta) {
    MockOptions o;
    o.dim = dim;
    o.theta = theta;
    return make_backend(selection, o);
  }, py::arg("selection") = "mock", py::arg("dim") = 64, py::arg("theta") = 0.5);

  m.def("train_projector", [](const TextAttributedGraph& g, const GcnModel& gnn, const LlmBackend& backend,
                              std::size_t tokens, int epochs, double beta, double tau, std::uint64_t seed,
                              const std::string& kind) {
    ProjectorTrainConfig c;
    c.tokens = tokens;
    c.epochs = epochs;
    c.beta = beta;
    c.tau = tau;
    c.seed = seed;
    c.kind = kind_from(kind);
    return train_projector(g, {gcn_forward(gnn, g).embeddings, "gcn"}, embed_all(g, backend), c).model;
  }, py::arg("graph"), py::arg("gnn"), py::arg("backend"), py::arg("tokens") = 4, py::arg("epochs") = 200,
     py::arg("beta") = 0.5, py::arg("tau") = 0.1, py::arg("seed") = 0, py::arg("kind") = "mlp");

  m.def("explain", [](const TextAttributedGraph& g, NodeId v, const GcnModel& gnn, const ProjectorModel* proj,
                      const LlmBackend& backend, const std::string& mode, bool post_processing, double p,
                      std::uint64_t seed, int tree_depth) {
    ExplainConfig c;
    c.mode = prompt_mode_from_string(mode);
    c.post_processing = post_processing;
    c.p = p;
    c.seed = seed;
    c.tree_depth = tree_depth;
    return dump(explanation_to_json(explain_node(g, v, gnn, proj, backend, c, default_template(g.name()))));
  }, py::arg("graph"), py::arg("node"), py::arg("gnn"), py::arg("projector"), py::arg("backend"),
     py::arg("mode") = "soft", py::arg("post_processing") = true, py::arg("p") = 0.5, py::arg("seed") = 0,
     py::arg("tree_depth") = 2);

  m.def("evaluate", [](const TextAttributedGraph& g, const GcnModel& gnn, const ProjectorModel* proj,
                       const LlmBackend* backend, const std::vector<std::string>& methods, std::optional<double> p,
                       std::size_t workers, std::uint64_t seed) {
    BenchmarkConfig c;
    for (const auto& s : methods) c.methods.push_back(parse_method(s));
    c.p = p;
    c.workers = workers;
    c.explain.seed = seed;
    py::gil_scoped_release release;
    return dump(report_to_json(run_benchmark(g, gnn, proj, backend, default_template(g.name()), c)));
  }, py::arg("graph"), py::arg("gnn"), py::arg("projector") = nullptr, py::arg("backend") = nullptr,
     py::arg("methods") = std::vector<std::string>{"node", "random(0.5)"}, py::arg("p") = std::nullopt,
     py::arg("workers") = 1, py::arg("seed") = 0);

  m.def("cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv{"tagx"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::dispatch(static_cast<int>(argv.size()), argv.data());
  }, py::arg("args"));
}
