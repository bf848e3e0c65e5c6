#include <cmath>
#include <random>

#include "doctest.h"
#include "palate/align.hpp"
#include "test_support.hpp"

using namespace palate;
using palate::testing::random_rotation;
using palate::testing::random_similarity;

namespace {

LandmarkSet random_landmarks(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  LandmarkSet s;
  for (int i = 0; i < kLandmarkCount; ++i) s.positions.col(i) = Vector3d(u(rng), u(rng), u(rng));
  return s;
}

double residual(const SimilarityTransform& t, const LandmarkSet& src, const LandmarkSet& dst) {
  const Matrix3Xd moved = t.apply(Matrix3Xd(src.positions));
  return (moved - dst.positions).squaredNorm();
}

Mesh dome() { return synth_palate(PhantomParams{}).first; }

}  // namespace

TEST_CASE("similarity_from_landmarks examples") {
  std::mt19937_64 rng(1);
  const LandmarkSet src = random_landmarks(rng);
  const SimilarityTransform id = similarity_from_landmarks(src, src, true);
  CHECK(std::abs(id.scale - 1.0) < 1e-10);
  CHECK((id.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(id.translation.cwiseAbs().maxCoeff() < 1e-10);

  LandmarkSet dst;
  dst.positions = (2.0 * src.positions).colwise() + Vector3d(1, 1, 1);
  const SimilarityTransform t = similarity_from_landmarks(src, dst, true);
  CHECK(std::abs(t.scale - 2.0) < 1e-9);
  CHECK((t.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((t.translation - Vector3d(1, 1, 1)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(residual(t, src, dst) < 1e-18 * dst.positions.squaredNorm() + 1e-16);

  LandmarkSet line;
  for (int i = 0; i < kLandmarkCount; ++i) line.positions.col(i) = Vector3d(1, 2, 3) * i + Vector3d(0, 1, 0);
  CHECK_THROWS_WITH(similarity_from_landmarks(line, dst, true), doctest::Contains("collinear"));
}

TEST_CASE("similarity_from_landmarks recovers known transforms") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const LandmarkSet src = random_landmarks(rng);
    const SimilarityTransform truth = random_similarity(rng);
    LandmarkSet dst;
    dst.positions = truth.apply(Matrix3Xd(src.positions));
    const SimilarityTransform t = similarity_from_landmarks(src, dst, true);
    CHECK(std::abs(t.scale - truth.scale) < 1e-9);
    CHECK((t.rotation - truth.rotation).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((t.translation - truth.translation).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(t.rotation.determinant() > 0);
    CHECK((t.rotation.transpose() * t.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);

    const SimilarityTransform rigid = similarity_from_landmarks(src, dst, false);
    CHECK(rigid.scale == 1.0);
  }
}

TEST_CASE("reflected targets still give a proper rotation") {
  std::mt19937_64 rng(3);
  const LandmarkSet src = random_landmarks(rng);
  LandmarkSet dst = src;
  dst.positions.row(0) *= -1.0;
  const SimilarityTransform t = similarity_from_landmarks(src, dst, true);
  CHECK(t.rotation.determinant() == doctest::Approx(1.0));
}

TEST_CASE("landmark similarity beats random transforms") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 2.0);
  const LandmarkSet src = random_landmarks(rng);
  const SimilarityTransform truth = random_similarity(rng);
  LandmarkSet dst;
  dst.positions = truth.apply(Matrix3Xd(src.positions));
  for (int i = 0; i < kLandmarkCount; ++i) dst.positions.col(i) += Vector3d(noise(rng), noise(rng), noise(rng));
  const double best = residual(similarity_from_landmarks(src, dst, true), src, dst);
  const double best_rigid = residual(similarity_from_landmarks(src, dst, false), src, dst);
  for (int k = 0; k < 1000; ++k) {
    SimilarityTransform r = random_similarity(rng);
    // Half the samples perturb the optimum slightly so the check is not vacuous.
    if (k % 2 == 0) {
      r = similarity_from_landmarks(src, dst, true);
      Eigen::AngleAxisd small(1e-3 * noise(rng), random_rotation(rng).col(0));
      r.rotation = small.toRotationMatrix() * r.rotation;
      r.scale *= 1.0 + 1e-3 * noise(rng);
      r.translation += 1e-3 * Vector3d(noise(rng), noise(rng), noise(rng));
    }
    CHECK(best <= residual(r, src, dst) + 1e-9);
    SimilarityTransform rr = r;
    rr.scale = 1.0;
    CHECK(best_rigid <= residual(rr, src, dst) + 1e-9);
  }
}

TEST_CASE("transform algebra and text form") {
  std::mt19937_64 rng(5);
  const SimilarityTransform a = random_similarity(rng), b = random_similarity(rng);
  const Vector3d p(1, -2, 3);
  CHECK((a.inverse().apply(a.apply(p)) - p).norm() < 1e-12);
  CHECK((a.compose(b).apply(p) - a.apply(b.apply(p))).norm() < 1e-11);
  const SimilarityTransform c = parse_transform(format_transform(a));
  CHECK(c.scale == a.scale);
  CHECK(c.rotation == a.rotation);
  CHECK(c.translation == a.translation);
  CHECK_THROWS(parse_transform("1 2 3"));
}

TEST_CASE("ICP recovers a small translation") {
  const Mesh m = dome();
  PointCloud target;
  target.points = m.vertices.colwise() + Vector3d(0.1, 0, 0);
  const IcpResult r = icp_refine(m, target, SimilarityTransform{});
  CHECK((r.transform.translation - Vector3d(0.1, 0, 0)).norm() < 1e-6);
  CHECK((r.transform.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(r.transform.scale == 1.0);
}

TEST_CASE("ICP on aligned data and with zero iterations") {
  const Mesh m = dome();
  PointCloud target{m.vertices};
  const IcpResult r = icp_refine(m, target, SimilarityTransform{});
  CHECK(r.iterations <= 1);
  CHECK(r.trimmed_mse.back() < 1e-12);

  SimilarityTransform init;
  init.translation = Vector3d(0.3, -0.2, 0.1);
  init.scale = 1.05;
  IcpParams none;
  none.max_iter = 0;
  const IcpResult z = icp_refine(m, target, init, none);
  CHECK(z.transform.translation == init.translation);
  CHECK(z.transform.rotation == init.rotation);
  CHECK(z.transform.scale == init.scale);

  CHECK_THROWS(icp_refine(m, PointCloud{}, init));
}

TEST_CASE("ICP trimmed MSE never increases and scale stays frozen") {
  std::mt19937_64 rng(6);
  const Mesh m = dome();
  for (int trial = 0; trial < 10; ++trial) {
    SimilarityTransform truth;
    Eigen::AngleAxisd rot(0.08, random_rotation(rng).col(0));
    truth.rotation = rot.toRotationMatrix();
    truth.translation = Vector3d::Random() * 1.5;
    PointCloud target{truth.apply(m.vertices)};
    SimilarityTransform init;
    init.scale = 1.0 + 0.01 * trial;
    const IcpResult r = icp_refine(m, target, init);
    for (std::size_t i = 1; i < r.trimmed_mse.size(); ++i) CHECK(r.trimmed_mse[i] <= r.trimmed_mse[i - 1]);
    CHECK(r.transform.scale == init.scale);
  }
}

TEST_CASE("GPA invariants and symmetry") {
  const Mesh m = dome();
  Mesh rotated = m;
  SimilarityTransform t;
  t.rotation = Eigen::AngleAxisd(M_PI / 6, Vector3d::UnitZ()).toRotationMatrix();
  t.translation = Vector3d(5, -3, 2);
  rotated.vertices = t.apply(m.vertices);
  const GpaResult g = gpa(std::vector<Mesh>{m, rotated});
  CHECK(rmsd(g.aligned[0], g.aligned[1]) < 1e-9);
  for (const auto& a : g.aligned) {
    CHECK(a.rowwise().mean().cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(a.norm() - 1.0) < 1e-9);
  }

  const GpaResult same = gpa(std::vector<Mesh>{m, m, m});
  const Matrix3Xd normalized = normalize_shape(m.vertices);
  // Consensus equals the normalized mesh up to the canonical pose.
  const SimilarityTransform pose = fit_similarity<double>(normalized, same.consensus, false);
  CHECK(rmsd(pose.apply(normalized), same.consensus) < 1e-9);
  CHECK(std::abs(same.consensus.norm() - 1.0) < 1e-9);

  Mesh other = m;
  other.vertices.conservativeResize(3, m.vertex_count() - 1);
  other.faces.resize(3, 0);
  CHECK_THROWS(gpa(std::vector<Mesh>{m, other}));
  CHECK_THROWS(gpa(std::vector<Mesh>{m}));
}

TEST_CASE("GPA is invariant to input similarity transforms and order") {
  std::mt19937_64 rng(7);
  const std::vector<Mesh> pop = synth_population(PhantomParams{}, 3, 0.3, 99);
  std::vector<Matrix3Xd> shapes;
  for (const auto& m : pop) shapes.push_back(m.vertices);
  const GpaResult base = gpa(shapes);

  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Matrix3Xd> moved;
    for (const auto& s : shapes) moved.push_back(random_similarity(rng).apply(s));
    const GpaResult g = gpa(moved);
    for (std::size_t i = 0; i < shapes.size(); ++i) CHECK(rmsd(g.aligned[i], base.aligned[i]) < 1e-8);
    CHECK(rmsd(g.consensus, base.consensus) < 1e-8);
  }

  const std::vector<Matrix3Xd> reversed{shapes[2], shapes[0], shapes[1]};
  const GpaResult r = gpa(reversed);
  CHECK(rmsd(r.aligned[0], base.aligned[2]) < 1e-8);
  CHECK(rmsd(r.aligned[1], base.aligned[0]) < 1e-8);
  CHECK(rmsd(r.aligned[2], base.aligned[1]) < 1e-8);
}
