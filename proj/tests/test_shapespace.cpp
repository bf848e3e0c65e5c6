#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "doctest.h"
#include "palate/shapespace.hpp"
#include "test_support.hpp"

using namespace palate;
using palate::testing::TempDir;
using palate::testing::train_phantoms;

namespace {

Mesh point_mesh(const Vector3d& p) {
  Mesh m;
  m.vertices = p;
  m.faces.resize(3, 0);
  return m;
}

CoefficientVector random_coefficients(std::mt19937_64& rng, const ShapeSpaceModel& model, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  CoefficientVector c(model.modes());
  for (Index i = 0; i < c.size(); ++i) c[i] = u(rng) * std::sqrt(model.variances[i]);
  return c;
}

double orthonormality_error(const ShapeSpaceModel& m) {
  const Index d = m.modes();
  return (m.basis.transpose() * m.basis - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("two-point training example") {
  const ShapeSpaceModel m = train({point_mesh({1, 0, 0}), point_mesh({-1, 0, 0})});
  CHECK(m.mean.norm() == 0.0);
  REQUIRE(m.modes() == 1);
  CHECK(std::abs(std::abs(m.basis(0, 0)) - 1.0) < 1e-15);
  CHECK(m.basis(0, 0) > 0.0);  // sign convention
  // Oracle: sample covariance with divisor n - 1 of {1, -1} along x is 2.
  const double oracle = (1.0 * 1.0 + 1.0 * 1.0) / (2 - 1);
  CHECK(m.variances[0] == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(m.n_train == 2);
}

TEST_CASE("training errors") {
  const Mesh a = point_mesh({1, 2, 3});
  CHECK_THROWS_WITH(train({a, a, a}), doctest::Contains("zero variance, nothing to train"));
  CHECK_THROWS(train({a}));
  const Mesh dome = synth_palate(PhantomParams{}).first;
  Mesh other = dome;
  other.faces.col(0).reverseInPlace();
  CHECK_THROWS_WITH(train({dome, other}), doctest::Contains("mismatched topologies"));
}

TEST_CASE("phantom model identities") {
  const auto t = train_phantoms(12, 0.4, 7);
  const ShapeSpaceModel& m = t.model;
  CHECK(m.modes() <= 11);
  CHECK(orthonormality_error(m) < 1e-10);
  for (Index i = 1; i < m.modes(); ++i) CHECK(m.variances[i] <= m.variances[i - 1]);

  Eigen::VectorXd coeff_sum = Eigen::VectorXd::Zero(m.modes());
  for (const auto& mesh : t.aligned) {
    const CoefficientVector c = project(m, mesh);
    coeff_sum += c + m.coeff_means;
    const Mesh back = generate(m, c);
    CHECK((back.vertices - mesh.vertices).cwiseAbs().maxCoeff() < 1e-8);
  }
  CHECK((coeff_sum / 12.0 - m.coeff_means).cwiseAbs().maxCoeff() < 1e-10);

  const Mesh mean = generate(m, CoefficientVector::Zero(m.modes()));
  CHECK(shape_vector(mean.vertices) == m.mean);
  CHECK(project(m, mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(mean.faces == t.aligned[0].faces);

  CoefficientVector first = CoefficientVector::Zero(m.modes());
  first[0] = std::sqrt(m.variances[0]);
  const Eigen::VectorXd expected = m.mean + std::sqrt(m.variances[0]) * m.basis.col(0);
  CHECK((shape_vector(generate(m, first).vertices) - expected).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    const CoefficientVector c = random_coefficients(rng, m, 3.0);
    CHECK((project(m, generate(m, c)) - c).cwiseAbs().maxCoeff() < 1e-10);
    const CoefficientVector a = random_coefficients(rng, m, 1.0), b = random_coefficients(rng, m, 1.0);
    const double alpha = std::uniform_real_distribution<double>(-0.5, 1.5)(rng);
    const Matrix3Xd blend = alpha * generate(m, a).vertices + (1 - alpha) * generate(m, b).vertices;
    CHECK((generate(m, alpha * a + (1 - alpha) * b).vertices - blend).cwiseAbs().maxCoeff() < 1e-10);
  }

  CHECK_THROWS(generate(m, CoefficientVector::Zero(m.modes() + 1)));
  CHECK_THROWS(project(m, synth_palate(PhantomParams{.nu = 9}).first));
}

TEST_CASE("variance_keep truncation") {
  const auto t = train_phantoms(12, 0.4, 3);
  const double total = t.model.variances.sum();
  for (double keep : {0.5, 0.9, 0.99}) {
    const ShapeSpaceModel m = train(t.aligned, keep);
    CHECK(m.variances.sum() / total >= keep);
    if (m.modes() > 1) CHECK(m.variances.head(m.modes() - 1).sum() / total < keep);
  }
}

TEST_CASE("log density") {
  ShapeSpaceModel one = train({point_mesh({1, 0, 0}), point_mesh({-1, 0, 0})});
  const double pi = std::numbers::pi;
  CHECK(log_density(one, CoefficientVector::Zero(1)) == doctest::Approx(-0.5 * std::log(4 * pi)));
  CoefficientVector c(1);
  c << std::sqrt(2.0);
  CHECK(log_density(one, c) == doctest::Approx(-0.5 * (1 + std::log(4 * pi))).epsilon(1e-14));

  // Composite Simpson over [-20 sigma, 20 sigma].
  const double sigma = std::sqrt(one.variances[0]);
  const int n = 20000;
  const double a = -20 * sigma, h = 40 * sigma / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    CoefficientVector x(1);
    x << a + i * h;
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    sum += w * std::exp(log_density(one, x));
  }
  CHECK(std::abs(sum * h / 3 - 1.0) < 1e-6);

  const double manual = std::exp(log_density(one, c));
  const double closed = std::exp(-0.5 * c[0] * c[0] / 2.0) / std::sqrt(2 * pi * 2.0);
  CHECK(manual == doctest::Approx(closed).epsilon(1e-14));

  one.variances[0] = 0.0;
  CHECK_THROWS_WITH(log_density(one, c), doctest::Contains("zero variance"));
}

TEST_CASE("model files") {
  TempDir dir("model");
  const auto t = train_phantoms(12, 0.4, 5);
  save_model(t.model, dir / "m.psm");
  const ShapeSpaceModel r = load_model(dir / "m.psm");
  CHECK(r.mean == t.model.mean);
  CHECK(r.basis == t.model.basis);
  CHECK(r.variances == t.model.variances);
  CHECK(r.coeff_means == t.model.coeff_means);
  CHECK(r.faces == t.model.faces);
  CHECK(r.landmark_indices == t.model.landmark_indices);
  CHECK(r.n_train == 12);
  CHECK(r.covariance_divisor_tag == 1);
  CHECK(generate(r, CoefficientVector::Zero(r.modes())).vertices ==
        generate(t.model, CoefficientVector::Zero(r.modes())).vertices);

  std::vector<std::uint8_t> bytes = serialize_model(t.model);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PSM1");
  CHECK(serialize_model(deserialize_model(bytes)) == bytes);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH(deserialize_model(bad_magic), doctest::Contains("magic mismatch"));

  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  CHECK_THROWS_WITH(deserialize_model(truncated), doctest::Contains("truncated"));

  // Scale the first basis entry; it sits after the 20-byte header and the mean.
  auto skewed = bytes;
  const std::size_t offset = 20 + 8 * static_cast<std::size_t>(t.model.dimension());
  double first;
  std::memcpy(&first, skewed.data() + offset, 8);
  first = first * 1.5 + 0.1;
  std::memcpy(skewed.data() + offset, &first, 8);
  CHECK_THROWS_WITH(deserialize_model(skewed), doctest::Contains("orthonormal"));

  CHECK_THROWS(load_model(dir / "missing.psm"));
}
