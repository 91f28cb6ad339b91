#include "tagx/projector.hpp"

#include "test_support.hpp"

#include <Eigen/QR>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace tagx;
using tagx::test::make_graph;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(gen);
  return m;
}

Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

// Independent loss oracle built from the stated formulas with plain loops.
struct OracleLoss {
  double context;
  double contrast;
};

std::vector<std::vector<double>> softmax_cosines(const Matrix& x, double temperature) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::vector<double>> p(n, std::vector<double>(n));
  for (std::size_t v = 0; v < n; ++v) {
    double denom = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
      const auto a = x.row(static_cast<Eigen::Index>(v));
      const auto b = x.row(static_cast<Eigen::Index>(u));
      p[v][u] = std::exp(a.dot(b) / (a.norm() * b.norm()) / temperature);
      denom += p[v][u];
    }
    for (auto& e : p[v]) e /= denom;
  }
  return p;
}

Matrix oracle_pooled(const ProjectorModel& p, const Matrix& gnn) {
  Matrix zbar(gnn.rows(), static_cast<Eigen::Index>(p.token_dim));
  for (Eigen::Index v = 0; v < gnn.rows(); ++v) {
    const Vector f = gnn.row(v).transpose();
    Vector out;
    if (p.kind == ProjectorKind::linear) {
      out = p.w1 * f;
    } else {
      Vector hidden = p.w1 * f + p.b1;
      for (Eigen::Index i = 0; i < hidden.size(); ++i) hidden[i] = std::max(0.0, hidden[i]);
      out = p.w2 * hidden + p.b2;
    }
    Vector mean = Vector::Zero(static_cast<Eigen::Index>(p.token_dim));
    for (std::size_t r = 0; r < p.tokens; ++r) {
      mean += out.segment(static_cast<Eigen::Index>(r * p.token_dim), static_cast<Eigen::Index>(p.token_dim));
    }
    zbar.row(v) = (mean / mean.norm()).transpose();
  }
  return zbar;
}

OracleLoss oracle_loss(const ProjectorModel& p, const Matrix& gnn, const Matrix& text, double tau) {
  const Matrix zbar = oracle_pooled(p, gnn);
  const auto n = static_cast<std::size_t>(gnn.rows());
  double context = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    context -= zbar.row(static_cast<Eigen::Index>(v)).dot(text.row(static_cast<Eigen::Index>(v)));
  }
  const auto pf = softmax_cosines(gnn, tau);
  const auto pz = softmax_cosines(zbar, 1.0);
  double contrast = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t u = 0; u < n; ++u) contrast -= pf[v][u] * std::log(pz[v][u]);
  }
  return {context / static_cast<double>(n), contrast / static_cast<double>(n)};
}

double entropy_of(const std::vector<std::vector<double>>& p) {
  double h = 0.0;
  for (const auto& row : p) {
    for (double e : row) h -= e * std::log(e);
  }
  return h / static_cast<double>(p.size());
}

}  // namespace

TEST(Projector, ZeroWeightsGiveZeroOutput) {
  auto p = make_projector(3, 2, 4, 1);
  p.w1.setZero();
  p.b1.setZero();
  p.w2.setZero();
  p.b2.setZero();
  const Matrix z = project(p, Vector::Constant(3, 1.5));
  EXPECT_EQ(z.rows(), 2);
  EXPECT_EQ(z.cols(), 4);
  EXPECT_TRUE(z.isZero(0.0));
  EXPECT_THROW(mean_pool_normalize(z), DegeneratePromptError);
}

TEST(Projector, LinearIdentityReturnsInput) {
  auto p = make_projector(2, 1, 2, 0, ProjectorKind::linear);
  p.w1 = Matrix::Identity(2, 2);
  Vector f(2);
  f << 0.3, -1.2;
  const Matrix z = project(p, f);
  EXPECT_EQ(z(0, 0), 0.3);
  EXPECT_EQ(z(0, 1), -1.2);
}

TEST(Projector, ProjectIsDeterministic) {
  const auto a = make_projector(5, 4, 3, 17);
  const auto b = make_projector(5, 4, 3, 17);
  const Vector f = random_matrix(5, 1, 3).col(0);
  EXPECT_EQ(project(a, f), project(b, f));
  EXPECT_EQ(project(a, f), project(a, f));
  EXPECT_THROW(project(a, Vector::Ones(4)), ShapeError);
}

TEST(Projector, MeanPoolExamples) {
  Matrix z(2, 2);
  z << 1, 0, 0, 1;
  const Vector a = mean_pool_normalize(z);
  EXPECT_NEAR(a[0], 0.7071, 1e-4);
  EXPECT_NEAR(a[1], 0.7071, 1e-4);
  EXPECT_NEAR(a[0], std::sqrt(0.5), 1e-15);

  Matrix one(1, 3);
  one << 3, 0, 4;
  const Vector b = mean_pool_normalize(one);
  EXPECT_NEAR(b[0], 0.6, 1e-15);
  EXPECT_NEAR(b[2], 0.8, 1e-15);

  Matrix twice(2, 2);
  twice << 2, 0, 2, 0;
  const Vector c = mean_pool_normalize(twice);
  EXPECT_EQ(c[0], 1.0);
  EXPECT_EQ(c[1], 0.0);

  Matrix cancel(2, 2);
  cancel << 1, -1, -1, 1;
  EXPECT_THROW(mean_pool_normalize(cancel), DegeneratePromptError);
}

TEST(Projector, ContextLossExamples) {
  const Matrix t = unit_rows(random_matrix(4, 3, 9));
  EXPECT_NEAR(context_loss(t, t), -1.0, 1e-9);

  Matrix zbar(1, 2), text(1, 2);
  zbar << 0.6, 0.8;
  text << 1, 0;
  EXPECT_NEAR(context_loss(zbar, text), -0.6, 1e-15);

  Matrix za(2, 2), ta(2, 2);
  za << 1, 0, 0, 1;
  ta << 0, 1, -1, 0;
  EXPECT_NEAR(context_loss(za, ta), 0.0, 1e-15);

  EXPECT_THROW(context_loss(Matrix(0, 2), Matrix(0, 2)), Error);
  EXPECT_THROW(context_loss(za, Matrix::Ones(3, 2)), Error);
}

TEST(Projector, ContrastiveLossIdenticalPairIsLn2) {
  Matrix zbar(2, 2), f(2, 3);
  zbar << 0.6, 0.8, 0.6, 0.8;
  f << 1, 2, 3, 1, 2, 3;
  EXPECT_NEAR(contrastive_loss(zbar, f, 1.0), std::log(2.0), 1e-9);
}

TEST(Projector, ContrastiveLossEqualsEntropyWhenDistributionsMatch) {
  const Matrix f = random_matrix(5, 4, 12);
  const Matrix zbar = unit_rows(f);
  const double loss = contrastive_loss(zbar, f, 1.0);
  EXPECT_NEAR(loss, entropy_of(softmax_cosines(f, 1.0)), 1e-12);
  // Any other pooled vectors give a larger cross-entropy.
  for (unsigned s = 0; s < 5; ++s) {
    EXPECT_GT(contrastive_loss(unit_rows(random_matrix(5, 4, 100 + s)), f, 1.0), loss);
  }
}

TEST(Projector, ContrastiveLossLowTemperatureLimit) {
  // Pairwise cosines stay well below 1, so the tau-tempered target is
  // one-hot on the self term.
  Matrix f(3, 3);
  f << 1, 0, 0, 0.5, 1, 0, 0, 0.4, 1;
  const Matrix zbar = unit_rows(random_matrix(3, 4, 5));
  const auto pz = softmax_cosines(zbar, 1.0);
  double expected = 0.0;
  for (std::size_t v = 0; v < 3; ++v) expected -= std::log(pz[v][v]);
  expected /= 3.0;
  EXPECT_NEAR(contrastive_loss(zbar, f, 1e-3), expected, 1e-9);
}

TEST(Projector, ContrastiveLossErrors) {
  const Matrix one = Matrix::Ones(1, 2);
  EXPECT_THROW(contrastive_loss(one, one, 1.0), Error);
  const Matrix two = unit_rows(random_matrix(2, 2, 1));
  EXPECT_THROW(contrastive_loss(two, two, 0.0), Error);
  EXPECT_THROW(contrastive_loss(two, two, -1.0), Error);
}

TEST(Projector, SimilarityRowsSumToOne) {
  const Matrix f = random_matrix(7, 5, 2);
  for (double t : {0.05, 0.1, 1.0, 3.0}) {
    const Matrix p = similarity_distribution(f, t);
    for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
  }
}

TEST(Projector, ContextLossInvariantToPooledScale) {
  const Matrix gnn = random_matrix(4, 3, 31);
  const Matrix text = unit_rows(random_matrix(4, 5, 32));
  auto p = make_projector(3, 2, 5, 4, ProjectorKind::linear);
  const ProjectorLossConfig cfg{1.0, 0.1, false};
  const double base = projector_loss(p, gnn, text, cfg).context;
  p.w1 *= 7.5;
  EXPECT_NEAR(projector_loss(p, gnn, text, cfg).context, base, 1e-12);
}

TEST(Projector, ContrastiveLossInvariantToRotation) {
  const Matrix f = random_matrix(6, 4, 41);
  const Matrix zbar = unit_rows(random_matrix(6, 3, 42));
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(random_matrix(4, 4, 43)));
  const Matrix q = Eigen::MatrixXd(qr.householderQ());
  const Matrix rotated = f * q;
  EXPECT_NEAR(contrastive_loss(zbar, rotated, 0.1), contrastive_loss(zbar, f, 0.1), 1e-9);
}

TEST(Projector, LossMixIsLinear) {
  const Matrix gnn = random_matrix(5, 3, 51);
  const Matrix text = unit_rows(random_matrix(5, 4, 52));
  const auto p = make_projector(3, 2, 4, 5);
  const auto l = projector_loss(p, gnn, text, {0.5, 0.1, false});
  EXPECT_DOUBLE_EQ(l.total, 0.5 * l.context + 0.5 * l.contrast);
  EXPECT_DOUBLE_EQ(projector_loss(p, gnn, text, {1.0, 0.1, false}).total, l.context);
  EXPECT_DOUBLE_EQ(projector_loss(p, gnn, text, {0.0, 0.1, false}).total, l.contrast);
}

TEST(Projector, LossMatchesIndependentOracle) {
  const Matrix gnn = random_matrix(6, 4, 61);
  const Matrix text = unit_rows(random_matrix(6, 3, 62));
  for (auto kind : {ProjectorKind::mlp, ProjectorKind::linear}) {
    auto p = make_projector(4, 3, 3, 6, kind);
    if (kind == ProjectorKind::mlp) p.b1.setConstant(0.05);
    const auto l = projector_loss(p, gnn, text, {0.3, 0.2, false});
    const auto o = oracle_loss(p, gnn, text, 0.2);
    EXPECT_NEAR(l.context, o.context, 1e-12);
    EXPECT_NEAR(l.contrast, o.contrast, 1e-12);
  }
}

TEST(Projector, GradientsMatchFiniteDifferencesOfOracle) {
  const Matrix gnn = random_matrix(6, 4, 71);
  const Matrix text = unit_rows(random_matrix(6, 3, 72));
  for (double beta : {1.0, 0.0, 0.5}) {
    for (auto kind : {ProjectorKind::mlp, ProjectorKind::linear}) {
      auto p = make_projector(4, 2, 3, 8, kind);
      if (kind == ProjectorKind::mlp) {
        p.b1.setConstant(0.03);
        p.b2.setConstant(-0.02);
      }
      const auto grads = projector_loss_and_gradients(p, gnn, text, {beta, 0.1, false});
      auto total = [&] {
        const auto o = oracle_loss(p, gnn, text, 0.1);
        return beta * o.context + (1 - beta) * o.contrast;
      };
      double worst = 0.0;
      auto check = [&](auto& param, const auto& grad) {
        ASSERT_EQ(param.size(), grad.size());
        for (Eigen::Index i = 0; i < param.size(); ++i) {
          const double saved = param.data()[i];
          param.data()[i] = saved + 1e-4;
          const double plus = total();
          param.data()[i] = saved - 1e-4;
          const double minus = total();
          param.data()[i] = saved;
          worst = std::max(worst, relative_error(grad.data()[i], (plus - minus) / 2e-4));
        }
      };
      check(p.w1, grads.w1);
      if (kind == ProjectorKind::mlp) {
        check(p.b1, grads.b1);
        check(p.w2, grads.w2);
        check(p.b2, grads.b2);
      }
      EXPECT_LT(worst, 1e-4) << "beta " << beta;
    }
  }
}

TEST(Projector, GradCheckReportsSmallError) {
  const auto sample = make_graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}}, 2,
                                 random_matrix(6, 4, 81));
  for (double beta : {1.0, 0.0, 0.5}) {
    for (auto kind : {ProjectorKind::mlp, ProjectorKind::linear}) {
      GradCheckConfig cfg;
      cfg.beta = beta;
      cfg.kind = kind;
      const auto report = grad_check(cfg, sample);
      EXPECT_GT(report.parameters_checked, 0u);
      EXPECT_LT(report.max_relative_error, 1e-4) << "beta " << beta << " worst " << report.worst_parameter;
    }
  }
}

TEST(Projector, LinearContextGradientClosedForm) {
  // Two identical nodes; k=1, W=[[1,0],[0,2]], f=(1,1), t=(1,0).
  // z=(1,2), dL/dz = -(t - <t,zhat> zhat)/|z| = -(0.8,-0.4)/sqrt(5), dL/dW = dL/dz f^T.
  auto p = make_projector(2, 1, 2, 0, ProjectorKind::linear);
  p.w1 << 1, 0, 0, 2;
  Matrix gnn(2, 2), text(2, 2);
  gnn << 1, 1, 1, 1;
  text << 1, 0, 1, 0;
  const auto grads = projector_loss_and_gradients(p, gnn, text, {1.0, 0.1, false});
  const double s = std::sqrt(5.0);
  Matrix expected(2, 2);
  expected << -0.8 / s, -0.8 / s, 0.4 / s, 0.4 / s;
  EXPECT_TRUE(grads.w1.isApprox(expected, 1e-12));
  EXPECT_NEAR(grads.loss.context, -1.0 / s, 1e-15);
}

TEST(Projector, DegenerateRowsAreSkipped) {
  auto p = make_projector(2, 1, 2, 0, ProjectorKind::linear);
  p.w1 = Matrix::Identity(2, 2);
  Matrix gnn(3, 2), text(3, 2);
  gnn << 1, 0, 0, 0, 0, 1;
  text << 1, 0, 1, 0, 0, 1;
  const auto grads = projector_loss_and_gradients(p, gnn, text, {0.5, 0.1, false});
  EXPECT_EQ(grads.skipped, (std::vector<std::size_t>{1}));
  EXPECT_TRUE(std::isfinite(grads.loss.total));
}

namespace {

struct TrainingFixture {
  TextAttributedGraph g;
  EmbeddingTable gnn;
  TextEmbeddingTable text;
};

TrainingFixture ten_node_fixture(std::size_t h) {
  TrainingFixture fx;
  fx.g = make_graph(10, {{0, 1}, {1, 2}, {3, 4}, {5, 6}, {7, 8}, {8, 9}});
  fx.gnn.vectors = random_matrix(10, 4, 91).cwiseAbs();
  fx.text.vectors = Matrix::Zero(10, static_cast<Eigen::Index>(h));
  fx.text.vectors.leftCols(4) = fx.gnn.vectors;
  fx.text.vectors = unit_rows(fx.text.vectors);
  return fx;
}

}  // namespace

TEST(Projector, TrainingContextOnlyDoesNotIncreaseContextLoss) {
  const auto fx = ten_node_fixture(6);
  ProjectorTrainConfig cfg;
  cfg.beta = 1.0;
  cfg.epochs = 50;
  const auto res = train_projector(fx.g, fx.gnn, fx.text, cfg);
  EXPECT_LE(res.final_loss.context, res.initial_loss.context);
}

TEST(Projector, TrainingContrastOnlyDoesNotIncreaseContrastLoss) {
  const auto fx = ten_node_fixture(6);
  ProjectorTrainConfig cfg;
  cfg.beta = 0.0;
  cfg.epochs = 50;
  const auto res = train_projector(fx.g, fx.gnn, fx.text, cfg);
  EXPECT_LE(res.final_loss.contrast, res.initial_loss.contrast);
}

TEST(Projector, TrainingShrinksBothLossGaps) {
  // Texts are the GNN embeddings padded to h. Each term is measured by its
  // distance to its lower bound: -1 for context, the entropy of the
  // GNN-side target distribution for contrast.
  const auto fx = ten_node_fixture(6);
  ProjectorTrainConfig cfg;
  cfg.beta = 0.5;
  const auto res = train_projector(fx.g, fx.gnn, fx.text, cfg);
  const double entropy = entropy_of(softmax_cosines(fx.gnn.vectors, cfg.tau));
  const double context_gap0 = res.initial_loss.context + 1.0;
  const double context_gap1 = res.final_loss.context + 1.0;
  const double contrast_gap0 = res.initial_loss.contrast - entropy;
  const double contrast_gap1 = res.final_loss.contrast - entropy;
  EXPECT_LE(context_gap1, 0.7 * context_gap0);
  EXPECT_LE(contrast_gap1, 0.7 * contrast_gap0);
}

TEST(Projector, TrainingIsDeterministic) {
  const auto fx = ten_node_fixture(6);
  ProjectorTrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 3;
  const auto a = train_projector(fx.g, fx.gnn, fx.text, cfg);
  const auto b = train_projector(fx.g, fx.gnn, fx.text, cfg);
  EXPECT_EQ(a.model.w1, b.model.w1);
  EXPECT_EQ(a.model.w2, b.model.w2);
  EXPECT_EQ(a.final_loss.total, b.final_loss.total);
}

TEST(Projector, ConfigValidation) {
  ProjectorTrainConfig cfg;
  cfg.beta = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.beta = 0.5;
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  TextEmbeddingTable t;
  t.vectors = Matrix::Ones(2, 2);
  EXPECT_THROW(t.validate(), Error);
}

TEST(Projector, CheckpointRoundTrip) {
  tagx::test::TempDir dir;
  auto p = make_projector(3, 2, 4, 11);
  p.beta = 0.25;
  p.tau = 0.3;
  save_projector(p, dir / "p.proj.json");
  const auto q = load_projector(dir / "p.proj.json");
  EXPECT_EQ(q.input_dim, 3u);
  EXPECT_EQ(q.tokens, 2u);
  EXPECT_EQ(q.token_dim, 4u);
  EXPECT_EQ(q.beta, 0.25);
  EXPECT_EQ(q.tau, 0.3);
  EXPECT_EQ(q.seed, 11u);
  EXPECT_EQ(q.w1, p.w1.cast<float>().cast<double>());
  EXPECT_EQ(q.b2, p.b2.cast<float>().cast<double>());
}
