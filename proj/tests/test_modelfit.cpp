#include <cmath>
#include <random>

#include "doctest.h"
#include "palate/modelfit.hpp"
#include "test_support.hpp"

using namespace palate;
using palate::testing::model_to_phantom_frame;
using palate::testing::random_similarity;
using palate::testing::train_phantoms;

namespace {

const ShapeSpaceModel& phantom_model() {
  static const ShapeSpaceModel model = train_phantoms(12, 0.4, 7).model;
  return model;
}

CoefficientVector inside_box(std::mt19937_64& rng, const ShapeSpaceModel& m, double fraction) {
  std::uniform_real_distribution<double> u(-fraction, fraction);
  CoefficientVector c(m.modes());
  for (Index i = 0; i < c.size(); ++i) c[i] = u(rng) * std::sqrt(m.variances[i]);
  return c;
}

FitTargets random_targets(std::mt19937_64& rng, const ShapeSpaceModel& m, int count) {
  std::uniform_int_distribution<int> vertex(0, static_cast<int>(m.vertex_count()) - 1);
  std::normal_distribution<double> n(0.0, 0.05);
  FitTargets t;
  t.points.resize(3, count);
  for (int k = 0; k < count; ++k) {
    t.vertices.push_back(vertex(rng));
    t.points.col(k) = m.mean.segment<3>(3 * t.vertices.back()) + Vector3d(n(rng), n(rng), n(rng));
  }
  return t;
}

// Target shape in the phantom millimeter frame: generate(c*) mapped by `pose`.
struct Scenario {
  Mesh truth;
  PointCloud cloud;
  LandmarkSet landmarks;
};

Scenario scenario(const ShapeSpaceModel& m, const CoefficientVector& c, const SimilarityTransform& pose) {
  Scenario s;
  s.truth = generate(m, c);
  s.truth.vertices = pose.apply(s.truth.vertices);
  s.cloud.points = s.truth.vertices;
  s.landmarks = landmark_positions(s.truth);
  return s;
}

double max_sd(const ShapeSpaceModel& m) { return m.standard_deviations().maxCoeff(); }

}  // namespace

TEST_CASE("energy examples") {
  const ShapeSpaceModel& m = phantom_model();
  std::mt19937_64 rng(1);
  const CoefficientVector c = inside_box(rng, m, 1.0);
  const Mesh g = generate(m, c);
  FitTargets self;
  for (Index j = 0; j < g.vertex_count(); ++j) self.vertices.push_back(static_cast<int>(j));
  self.points = g.vertices;
  const EnergyValue e = fitting_energy(m, c, self);
  CHECK(e.value < 1e-28);
  CHECK(e.gradient.cwiseAbs().maxCoeff() < 1e-14);

  FitTargets one;
  one.vertices = {5};
  one.points = m.mean.segment<3>(15) + Vector3d(1, 0, 0);
  CHECK(fitting_energy(m, CoefficientVector::Zero(m.modes()), one).value == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_WITH(fitting_energy(m, c, FitTargets{}), doctest::Contains("empty target list"));
  FitTargets bad = one;
  bad.vertices = {100000};
  CHECK_THROWS(fitting_energy(m, c, bad));
}

TEST_CASE("analytic gradient matches central differences") {
  const ShapeSpaceModel& m = phantom_model();
  std::mt19937_64 rng(2);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const CoefficientVector c = inside_box(rng, m, 1.5);
    const FitTargets t = random_targets(rng, m, 1 + trial * 7);
    const EnergyValue e = fitting_energy(m, c, t);
    const FittingEnergy cached(m, t);
    Eigen::VectorXd g2;
    CHECK(cached(c, g2) == doctest::Approx(e.value).epsilon(1e-12));
    for (Index i = 0; i < c.size(); ++i) {
      CoefficientVector cp = c, cm = c;
      cp[i] += h;
      cm[i] -= h;
      const double fd = (fitting_energy(m, cp, t).value - fitting_energy(m, cm, t).value) / (2 * h);
      CHECK(std::abs(fd - e.gradient[i]) < 1e-5 * (1 + e.gradient.cwiseAbs().maxCoeff()));
      CHECK(std::abs(g2[i] - e.gradient[i]) < 1e-12 * (1 + std::abs(e.gradient[i])));
    }
  }
}

TEST_CASE("cloud fit recovers coefficients inside the box") {
  const ShapeSpaceModel& m = phantom_model();
  const SimilarityTransform frame = model_to_phantom_frame(m);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const CoefficientVector truth = inside_box(rng, m, 0.9);
    const Scenario s = scenario(m, truth, frame);
    const FitResult fit = fit_to_cloud(m, s.cloud, s.landmarks);
    CHECK((fit.coefficients - truth).cwiseAbs().maxCoeff() < 1e-3 * max_sd(m));
  }
}

TEST_CASE("coefficients outside the box are clamped exactly") {
  const ShapeSpaceModel& m = phantom_model();
  const SimilarityTransform frame = model_to_phantom_frame(m);
  CoefficientVector truth = CoefficientVector::Zero(m.modes());
  truth[0] = 2 * std::sqrt(m.variances[0]);
  const Scenario s = scenario(m, truth, frame);
  const FitResult fit = fit_to_cloud(m, s.cloud, s.landmarks);
  CHECK(fit.coefficients[0] == std::sqrt(m.variances[0]));
}

TEST_CASE("mean cloud gives zero coefficients") {
  const ShapeSpaceModel& m = phantom_model();
  const Scenario s = scenario(m, CoefficientVector::Zero(m.modes()), model_to_phantom_frame(m));
  const FitResult fit = fit_to_cloud(m, s.cloud, s.landmarks);
  CHECK(fit.coefficients.cwiseAbs().maxCoeff() < 1e-6 * max_sd(m));
  CHECK(fit.log_density == doctest::Approx(log_density(m, fit.coefficients)));
}

TEST_CASE("cloud fit errors") {
  const ShapeSpaceModel& m = phantom_model();
  const Scenario s = scenario(m, CoefficientVector::Zero(m.modes()), model_to_phantom_frame(m));
  CHECK_THROWS_WITH(fit_to_cloud(m, PointCloud{}, s.landmarks), doctest::Contains("empty cloud"));
  PointCloud far;
  far.points = Matrix3Xd::Constant(3, 4, 1e4);
  far.points.col(1).x() += 1.0;
  far.points.col(2).y() += 1.0;
  far.points.col(3).z() += 1.0;
  FitParams p;
  p.icp.max_iter = 0;
  CHECK_THROWS_WITH(fit_to_cloud(m, far, s.landmarks, p), doctest::Contains("no correspondences"));
  p.max_iter = 0;
  CHECK_THROWS(fit_to_cloud(m, s.cloud, s.landmarks, p));
}

TEST_CASE("landmark fit") {
  const ShapeSpaceModel& m = phantom_model();
  const SimilarityTransform frame = model_to_phantom_frame(m);
  const Scenario mean = scenario(m, CoefficientVector::Zero(m.modes()), frame);
  const FitResult zero = fit_to_landmarks(m, mean.landmarks);
  CHECK(zero.coefficients.cwiseAbs().maxCoeff() < 1e-6 * max_sd(m));

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const CoefficientVector truth = inside_box(rng, m, 0.3);
    const Scenario s = scenario(m, truth, frame);
    const FitResult fit = fit_to_landmarks(m, s.landmarks);
    // Oracle: the generating coefficients evaluated in the fitted pose.
    const SimilarityTransform to_model = fit.transform.inverse();
    FitTargets t;
    for (int i = 0; i < kLandmarkCount; ++i) t.vertices.push_back(m.landmark_indices.at(std::string(kLandmarkNames[i])));
    t.points = to_model.apply(Matrix3Xd(s.landmarks.positions));
    const double s2 = fit.transform.scale * fit.transform.scale;
    CHECK(fit.final_energy <= s2 * fitting_energy(m, truth, t).value + 1e-9);
    CHECK(fit.final_energy <= s2 * fitting_energy(m, CoefficientVector::Zero(m.modes()), t).value + 1e-12);
  }

  std::vector<std::pair<std::string, Vector3d>> six;
  for (int i = 0; i < 6; ++i) six.emplace_back(std::string(kLandmarkNames[i]), mean.landmarks.positions.col(i));
  CHECK_THROWS(fit_to_landmarks(m, LandmarkSet::from_entries(six)));
}

TEST_CASE("fits are invariant to a joint similarity of the data") {
  const ShapeSpaceModel& m = phantom_model();
  const SimilarityTransform frame = model_to_phantom_frame(m);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const CoefficientVector truth = inside_box(rng, m, 0.8);
    const Scenario s = scenario(m, truth, frame);
    const SimilarityTransform extra = random_similarity(rng, 0.8, 1.25);
    const Scenario moved = scenario(m, truth, extra.compose(frame));
    const FitResult a = fit_to_cloud(m, s.cloud, s.landmarks);
    const FitResult b = fit_to_cloud(m, moved.cloud, moved.landmarks);
    CHECK((a.coefficients - b.coefficients).cwiseAbs().maxCoeff() < 1e-6);
    const FitResult la = fit_to_landmarks(m, s.landmarks);
    const FitResult lb = fit_to_landmarks(m, moved.landmarks);
    CHECK((la.coefficients - lb.coefficients).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("energy never rises within a block and ends below the mean-shape energy") {
  const ShapeSpaceModel& m = phantom_model();
  const SimilarityTransform frame = model_to_phantom_frame(m);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (int trial = 0; trial < 5; ++trial) {
    Scenario s = scenario(m, inside_box(rng, m, 1.5), frame);
    for (Index p = 0; p < s.cloud.size(); ++p) s.cloud.points.col(p) += Vector3d(noise(rng), noise(rng), noise(rng));
    const FitResult fit = fit_to_cloud(m, s.cloud, s.landmarks);
    for (const auto& block : fit.energy_blocks)
      for (std::size_t i = 1; i < block.size(); ++i) CHECK(block[i] <= block[i - 1]);
    REQUIRE(!fit.energy_blocks.empty());
    CHECK(fit.final_energy <= fit.energy_blocks.front().front());
    for (Index i = 0; i < m.modes(); ++i) CHECK(std::abs(fit.coefficients[i]) <= std::sqrt(m.variances[i]));
  }
}

TEST_CASE("fit result text round trip") {
  FitResult f;
  f.transform.scale = 1.25;
  f.transform.translation = Vector3d(1, 2, 3);
  f.coefficients = Eigen::VectorXd::LinSpaced(4, -0.5, 0.25);
  f.final_energy = 3.5;
  f.iterations = 17;
  f.log_density = -4.25;
  const FitResult g = parse_fit_result(format_fit_result(f));
  CHECK(g.coefficients == f.coefficients);
  CHECK(g.transform.scale == f.transform.scale);
  CHECK(g.transform.translation == f.transform.translation);
  CHECK(g.final_energy == f.final_energy);
  CHECK(g.iterations == 17);
  CHECK(g.log_density == f.log_density);
  CHECK_THROWS(parse_fit_result("transform 1 2"));
}
