#include "tagx/projector.hpp"

#include "tagx/checkpoint.hpp"
#include "tagx/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tagx {

using nlohmann::json;

namespace {

constexpr double kUnitTolerance = 1e-6;
constexpr double kDegenerateNorm = 1e-12;

Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

/// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double max = s.row(i).maxCoeff();
    const double lse = max + std::log((s.row(i).array() - max).exp().sum());
    out.row(i) = s.row(i).array() - lse;
  }
  return out;
}

/// Forward pass over a batch of GNN embeddings (one per row).
struct BatchForward {
  Matrix pre;     // mlp hidden pre-activation (B x 2m)
  Matrix hidden;  // rectified (B x 2m)
  Matrix out;     // B x k*h
  Matrix pooled;  // B x h, unnormalized row means
  Vector norms;
  Matrix zbar;    // B x h, normalized
};

BatchForward forward_batch(const ProjectorModel& p, const Matrix& gnn) {
  BatchForward f;
  if (p.kind == ProjectorKind::linear) {
    f.out = gnn * p.w1.transpose();
  } else {
    f.pre = gnn * p.w1.transpose();
    f.pre.rowwise() += p.b1.transpose();
    f.hidden = f.pre.cwiseMax(0.0);
    f.out = f.hidden * p.w2.transpose();
    f.out.rowwise() += p.b2.transpose();
  }
  const auto h = static_cast<Eigen::Index>(p.token_dim);
  const auto k = static_cast<Eigen::Index>(p.tokens);
  f.pooled = Matrix::Zero(gnn.rows(), h);
  for (Eigen::Index i = 0; i < k; ++i) f.pooled += f.out.middleCols(i * h, h);
  f.pooled /= static_cast<double>(k);
  f.norms = f.pooled.rowwise().norm();
  f.zbar = f.pooled;
  for (Eigen::Index b = 0; b < f.zbar.rows(); ++b) {
    if (f.norms[b] > kDegenerateNorm) f.zbar.row(b) /= f.norms[b];
  }
  return f;
}

std::vector<Eigen::Index> valid_rows(const BatchForward& f, std::vector<std::size_t>* skipped) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index b = 0; b < f.norms.size(); ++b) {
    if (f.norms[b] > kDegenerateNorm && std::isfinite(f.norms[b])) {
      rows.push_back(b);
    } else if (skipped) {
      skipped->push_back(static_cast<std::size_t>(b));
    }
  }
  return rows;
}

Matrix take_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

void check_finite_param(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw DivergenceError(std::string("projector parameter ") + what + " is non-finite");
}

}  // namespace

void TextEmbeddingTable::validate() const {
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    const double norm = vectors.row(i).norm();
    if (std::abs(norm - 1.0) > kUnitTolerance) {
      throw DataError("text embedding row " + std::to_string(i) + " has norm " + std::to_string(norm));
    }
  }
}

void ProjectorModel::validate() const {
  const auto m = static_cast<Eigen::Index>(input_dim);
  const auto out = static_cast<Eigen::Index>(output_dim());
  if (tokens == 0 || token_dim == 0 || input_dim == 0) throw ShapeError("projector dimensions must be positive");
  if (kind == ProjectorKind::linear) {
    if (w1.rows() != out || w1.cols() != m) throw ShapeError("linear projector weight has wrong shape");
  } else {
    const Eigen::Index hidden = w1.rows();
    if (w1.cols() != m || b1.size() != hidden || w2.rows() != out || w2.cols() != hidden ||
        b2.size() != out) {
      throw ShapeError("projector layer shapes do not chain m -> hidden -> k*h");
    }
  }
  check_finite_param(w1, "w1");
  check_finite_param(w2, "w2");
}

ProjectorModel make_projector(std::size_t input_dim, std::size_t tokens, std::size_t token_dim,
                              std::uint64_t seed, ProjectorKind kind) {
  ProjectorModel p;
  p.kind = kind;
  p.input_dim = input_dim;
  p.tokens = tokens;
  p.token_dim = token_dim;
  p.seed = seed;
  Rng rng(mix_seed(seed, 0x70726f6a));
  auto glorot = [&rng](Eigen::Index rows, Eigen::Index cols) {
    Matrix w(rows, cols);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
    return w;
  };
  const auto m = static_cast<Eigen::Index>(input_dim);
  const auto out = static_cast<Eigen::Index>(p.output_dim());
  if (kind == ProjectorKind::linear) {
    p.w1 = glorot(out, m);
  } else {
    p.w1 = glorot(2 * m, m);
    p.b1 = Vector::Zero(2 * m);
    p.w2 = glorot(out, 2 * m);
    p.b2 = Vector::Zero(out);
  }
  p.validate();
  return p;
}

Matrix project(const ProjectorModel& p, const Vector& f) {
  if (static_cast<std::size_t>(f.size()) != p.input_dim) {
    throw ShapeError("projector expects a " + std::to_string(p.input_dim) + "-dim embedding, got " +
                     std::to_string(f.size()));
  }
  const BatchForward fwd = forward_batch(p, f.transpose());
  Matrix z(static_cast<Eigen::Index>(p.tokens), static_cast<Eigen::Index>(p.token_dim));
  for (Eigen::Index i = 0; i < z.rows(); ++i) z.row(i) = fwd.out.block(0, i * z.cols(), 1, z.cols());
  if (!z.allFinite()) throw DivergenceError("projector produced non-finite output");
  return z;
}

Vector mean_pool_normalize(const Matrix& z) {
  if (z.rows() == 0) throw ShapeError("empty soft prompt");
  if (!z.allFinite()) throw Error("soft prompt contains non-finite values");
  Vector mean = z.colwise().mean().transpose();
  const double norm = mean.norm();
  if (!(norm > kDegenerateNorm)) throw DegeneratePromptError();
  return mean / norm;
}

Matrix similarity_distribution(const Matrix& rows, double temperature) {
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  const Matrix n = normalize_rows(rows);
  return log_softmax_rows(n * n.transpose() / temperature).array().exp();
}

double context_loss(const Matrix& zbar, const Matrix& text) {
  if (zbar.rows() == 0) throw Error("context_loss: empty batch");
  if (zbar.rows() != text.rows() || zbar.cols() != text.cols()) {
    throw ShapeError("context_loss: soft prompts and text embeddings are not aligned");
  }
  return -zbar.cwiseProduct(text).sum() / static_cast<double>(zbar.rows());
}

double contrastive_loss(const Matrix& zbar, const Matrix& gnn, double tau, double soft_temperature) {
  if (!(tau > 0.0)) throw Error("contrastive_loss: tau must be positive");
  if (!(soft_temperature > 0.0)) throw Error("contrastive_loss: temperature must be positive");
  if (zbar.rows() < 2) throw Error("contrastive_loss: batch needs at least 2 nodes");
  if (zbar.rows() != gnn.rows()) throw ShapeError("contrastive_loss: batches are not aligned");
  const Matrix f = normalize_rows(gnn);
  const Eigen::Index n = zbar.rows();
  constexpr Eigen::Index kBlock = 512;
  double total = 0.0;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, n - start);
    const Matrix target = log_softmax_rows(f.middleRows(start, len) * f.transpose() / tau).array().exp();
    const Matrix log_q = log_softmax_rows(zbar.middleRows(start, len) * zbar.transpose() / soft_temperature);
    total -= target.cwiseProduct(log_q).sum();
  }
  return total / static_cast<double>(n);
}

void ProjectorLossConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error("beta must lie in [0, 1]");
  if (!(tau > 0.0)) throw Error("tau must be positive");
}

namespace {

ProjectorLoss combine(double context, double contrast, double beta) {
  return {context, contrast, beta * context + (1.0 - beta) * contrast};
}

}  // namespace

ProjectorLoss projector_loss(const ProjectorModel& p, const Matrix& gnn, const Matrix& text,
                             const ProjectorLossConfig& cfg) {
  cfg.validate();
  if (gnn.rows() != text.rows()) throw ShapeError("projector_loss: tables are not aligned");
  const BatchForward fwd = forward_batch(p, gnn);
  const auto rows = valid_rows(fwd, nullptr);
  if (rows.empty()) throw DegeneratePromptError();
  const Matrix zbar = take_rows(fwd.zbar, rows);
  const double ctx = context_loss(zbar, take_rows(text, rows));
  double con = 0.0;
  if (rows.size() >= 2) {
    con = contrastive_loss(zbar, take_rows(gnn, rows), cfg.tau, cfg.soft_temperature());
  } else if (cfg.beta < 1.0) {
    throw Error("projector_loss: contrastive term needs at least 2 usable nodes");
  }
  return combine(ctx, con, cfg.beta);
}

ProjectorGradients projector_loss_and_gradients(const ProjectorModel& p, const Matrix& gnn,
                                                const Matrix& text, const ProjectorLossConfig& cfg) {
  cfg.validate();
  if (gnn.rows() != text.rows()) throw ShapeError("projector batch tables are not aligned");
  ProjectorGradients out;
  const BatchForward fwd = forward_batch(p, gnn);
  const auto rows = valid_rows(fwd, &out.skipped);
  if (rows.empty()) throw DegeneratePromptError();
  const auto count = static_cast<Eigen::Index>(rows.size());
  const double inv_b = 1.0 / static_cast<double>(count);

  const Matrix zbar = take_rows(fwd.zbar, rows);
  const Matrix t = take_rows(text, rows);
  const double ctx = context_loss(zbar, t);

  // d(total)/d(zbar)
  Matrix d_zbar = -cfg.beta * inv_b * t;
  double con = 0.0;
  if (count >= 2) {
    const Matrix f = take_rows(gnn, rows);
    const double temp = cfg.soft_temperature();
    con = contrastive_loss(zbar, f, cfg.tau, temp);
    if (cfg.beta < 1.0) {
      const Matrix target = similarity_distribution(f, cfg.tau);
      const Matrix q = log_softmax_rows(zbar * zbar.transpose() / temp).array().exp();
      const Matrix g = (q - target) * inv_b;
      d_zbar += (1.0 - cfg.beta) / temp * (g + g.transpose()) * zbar;
    }
  } else if (cfg.beta < 1.0) {
    throw Error("contrastive term needs at least 2 usable nodes in the batch");
  }
  out.loss = combine(ctx, con, cfg.beta);

  // Through normalization and mean pooling back to the flat output.
  const auto h = static_cast<Eigen::Index>(p.token_dim);
  const auto k = static_cast<Eigen::Index>(p.tokens);
  Matrix d_out = Matrix::Zero(gnn.rows(), fwd.out.cols());
  for (Eigen::Index i = 0; i < count; ++i) {
    const Eigen::Index b = rows[static_cast<std::size_t>(i)];
    const auto z = zbar.row(i);
    const auto dz = d_zbar.row(i);
    const Eigen::RowVectorXd d_pooled = (dz - z * z.dot(dz)) / fwd.norms[b];
    for (Eigen::Index j = 0; j < k; ++j) d_out.block(b, j * h, 1, h) = d_pooled / static_cast<double>(k);
  }

  if (p.kind == ProjectorKind::linear) {
    out.w1 = d_out.transpose() * gnn;
  } else {
    out.w2 = d_out.transpose() * fwd.hidden;
    out.b2 = d_out.colwise().sum().transpose();
    const Matrix d_pre = (d_out * p.w2).cwiseProduct((fwd.pre.array() > 0.0).cast<double>().matrix());
    out.w1 = d_pre.transpose() * gnn;
    out.b1 = d_pre.colwise().sum().transpose();
  }
  return out;
}

void ProjectorTrainConfig::validate() const {
  loss_config().validate();
  if (tokens == 0) throw Error("token count must be positive");
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (epochs < 0) throw Error("epochs must be non-negative");
  if (batch < 2) throw Error("batch must hold at least 2 nodes");
}

namespace {

struct Adam {
  Matrix mw1, vw1, mw2, vw2;
  Vector mb1, vb1, mb2, vb2;
  long step = 0;
  double lr;

  Adam(const ProjectorModel& p, double learning_rate) : lr(learning_rate) {
    mw1 = vw1 = Matrix::Zero(p.w1.rows(), p.w1.cols());
    mw2 = vw2 = Matrix::Zero(p.w2.rows(), p.w2.cols());
    mb1 = vb1 = Vector::Zero(p.b1.size());
    mb2 = vb2 = Vector::Zero(p.b2.size());
  }

  template <typename P, typename M>
  void update(P& param, const P& grad, M& m, M& v, double c1, double c2) const {
    if (param.size() == 0) return;
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
  }

  void apply(ProjectorModel& p, const ProjectorGradients& g) {
    ++step;
    const double c1 = 1.0 - std::pow(0.9, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(0.999, static_cast<double>(step));
    update(p.w1, g.w1, mw1, vw1, c1, c2);
    update(p.b1, g.b1, mb1, vb1, c1, c2);
    update(p.w2, g.w2, mw2, vw2, c1, c2);
    update(p.b2, g.b2, mb2, vb2, c1, c2);
  }
};

Matrix gather(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace

ProjectorTrainResult train_projector(const TextAttributedGraph& g, const EmbeddingTable& gnn,
                                     const TextEmbeddingTable& texts, const ProjectorTrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = g.num_nodes();
  if (static_cast<std::size_t>(gnn.vectors.rows()) != n || static_cast<std::size_t>(texts.vectors.rows()) != n) {
    throw ShapeError("embedding tables are not aligned with the graph's " + std::to_string(n) + " nodes");
  }
  if (n < 2) throw Error("train_projector needs at least 2 nodes");
  texts.validate();
  const ProjectorLossConfig loss_cfg = cfg.loss_config();

  ProjectorTrainResult result;
  ProjectorModel model = make_projector(static_cast<std::size_t>(gnn.vectors.cols()), cfg.tokens,
                                        static_cast<std::size_t>(texts.vectors.cols()), cfg.seed, cfg.kind);
  model.beta = cfg.beta;
  model.tau = cfg.tau;

  Rng rng(mix_seed(cfg.seed, 0x747261696e));
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> selection = all;
  if (n > cfg.selection_nodes && cfg.selection_nodes >= 2) {
    selection = rng.sample(all, cfg.selection_nodes);
    std::sort(selection.begin(), selection.end());
  }
  const Matrix sel_gnn = gather(gnn.vectors, selection);
  const Matrix sel_text = gather(texts.vectors, selection);

  result.initial_loss = projector_loss(model, gnn.vectors, texts.vectors, loss_cfg);
  double best = projector_loss(model, sel_gnn, sel_text, loss_cfg).total;
  ProjectorModel best_model = model;

  Adam adam(model, cfg.learning_rate);
  std::vector<std::size_t> order = all;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch)));
    }
    if (batches.size() > 1 && batches.back().size() < 2) {
      auto tail = std::move(batches.back());
      batches.pop_back();
      batches.back().insert(batches.back().end(), tail.begin(), tail.end());
    }
    for (const auto& batch : batches) {
      ProjectorGradients grads;
      try {
        grads = projector_loss_and_gradients(model, gather(gnn.vectors, batch), gather(texts.vectors, batch), loss_cfg);
      } catch (const DegeneratePromptError&) {
        spdlog::warn("projector epoch {}: every soft prompt in a batch is degenerate; step skipped", epoch);
        result.skipped_samples += batch.size();
        continue;
      }
      if (!grads.skipped.empty()) {
        spdlog::warn("projector epoch {}: skipped {} degenerate soft prompt(s)", epoch, grads.skipped.size());
        result.skipped_samples += grads.skipped.size();
      }
      if (!std::isfinite(grads.loss.total)) {
        throw DivergenceError("projector loss became non-finite at epoch " + std::to_string(epoch));
      }
      adam.apply(model, grads);
    }
    model.validate();
    const ProjectorLoss sel = projector_loss(model, sel_gnn, sel_text, loss_cfg);
    result.history.push_back(sel);
    if (sel.total < best) {
      best = sel.total;
      best_model = model;
      result.best_epoch = epoch;
    }
  }
  result.model = std::move(best_model);
  result.final_loss = projector_loss(result.model, gnn.vectors, texts.vectors, loss_cfg);
  return result;
}

double relative_error(double analytic, double numeric) noexcept {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport grad_check(const GradCheckConfig& cfg, const TextAttributedGraph& sample) {
  const ProjectorLossConfig loss_cfg{cfg.beta, cfg.tau, cfg.shared_temperature};
  loss_cfg.validate();
  if (sample.num_nodes() < 2) throw Error("grad_check needs at least 2 nodes");
  const Matrix& gnn = sample.features();
  ProjectorModel model = make_projector(static_cast<std::size_t>(gnn.cols()), cfg.tokens, cfg.token_dim,
                                        cfg.seed, cfg.kind);
  // Small random biases so that bias gradients are exercised away from zero.
  Rng rng(mix_seed(cfg.seed, 0x6772616463));
  for (Eigen::Index i = 0; i < model.b1.size(); ++i) model.b1[i] = rng.uniform(-0.1, 0.1);
  for (Eigen::Index i = 0; i < model.b2.size(); ++i) model.b2[i] = rng.uniform(-0.1, 0.1);
  Matrix text(gnn.rows(), static_cast<Eigen::Index>(cfg.token_dim));
  for (Eigen::Index i = 0; i < text.size(); ++i) text.data()[i] = rng.normal();
  text = normalize_rows(text);

  const ProjectorGradients analytic = projector_loss_and_gradients(model, gnn, text, loss_cfg);
  GradCheckReport report;
  auto check = [&](auto& param, const auto& grad, const std::string& name) {
    for (Eigen::Index i = 0; i < param.size(); ++i) {
      const double saved = param.data()[i];
      param.data()[i] = saved + cfg.epsilon;
      const double plus = projector_loss(model, gnn, text, loss_cfg).total;
      param.data()[i] = saved - cfg.epsilon;
      const double minus = projector_loss(model, gnn, text, loss_cfg).total;
      param.data()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * cfg.epsilon);
      const double err = relative_error(grad.data()[i], numeric);
      ++report.parameters_checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = name + "[" + std::to_string(i) + "]";
      }
    }
  };
  check(model.w1, analytic.w1, "w1");
  check(model.b1, analytic.b1, "b1");
  check(model.w2, analytic.w2, "w2");
  check(model.b2, analytic.b2, "b2");
  return report;
}

void save_projector(const ProjectorModel& p, const std::filesystem::path& path, const json& config_echo) {
  p.validate();
  json j;
  j["format"] = "tagx-projector";
  j["version"] = 1;
  j["kind"] = p.kind == ProjectorKind::linear ? "linear" : "mlp";
  j["m"] = p.input_dim;
  j["k"] = p.tokens;
  j["h"] = p.token_dim;
  j["beta"] = p.beta;
  j["tau"] = p.tau;
  j["seed"] = p.seed;
  j["w1"] = checkpoint::encode_matrix(p.w1);
  if (p.kind == ProjectorKind::mlp) {
    j["b1"] = checkpoint::encode_vector(p.b1);
    j["w2"] = checkpoint::encode_matrix(p.w2);
    j["b2"] = checkpoint::encode_vector(p.b2);
  }
  if (!config_echo.is_null()) j["config"] = config_echo;
  checkpoint::write_json(path, j);
}

ProjectorModel load_projector(const std::filesystem::path& path) {
  const json j = checkpoint::read_json(path);
  if (j.value("format", "") != "tagx-projector") throw DataError(path.string() + ": not a projector checkpoint");
  ProjectorModel p;
  try {
    p.kind = j.at("kind").get<std::string>() == "linear" ? ProjectorKind::linear : ProjectorKind::mlp;
    p.input_dim = j.at("m").get<std::size_t>();
    p.tokens = j.at("k").get<std::size_t>();
    p.token_dim = j.at("h").get<std::size_t>();
    p.beta = j.at("beta").get<double>();
    p.tau = j.at("tau").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.w1 = checkpoint::decode_matrix(j.at("w1"));
    if (p.kind == ProjectorKind::mlp) {
      p.b1 = checkpoint::decode_vector(j.at("b1"));
      p.w2 = checkpoint::decode_matrix(j.at("w2"));
      p.b2 = checkpoint::decode_vector(j.at("b2"));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  p.validate();
  return p;
}

}  // namespace tagx
