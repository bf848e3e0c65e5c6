#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "palate/templatefit.hpp"
#include "test_support.hpp"

using namespace palate;

TEST_CASE("template fit onto its own surface stays put") {
  const auto [templ, landmarks] = synth_palate(PhantomParams{});
  const PointCloud cloud = sample_surface(templ, 3);
  const Mesh out = fit_template(templ, cloud, landmarks);
  const double tol = 0.1 * mean_edge_length(templ);
  double worst = 0.0;
  for (Index j = 0; j < templ.vertex_count(); ++j)
    worst = std::max(worst, (out.vertices.col(j) - templ.vertices.col(j)).norm());
  CHECK(worst < tol);
  CHECK(out.faces == templ.faces);
  CHECK(out.landmark_indices == templ.landmark_indices);
}

TEST_CASE("huge smoothness weight returns the posed template") {
  PhantomParams target_params;
  target_params.dome_height = 18.0;
  target_params.asymmetry = 0.2;
  const auto [target, target_landmarks] = synth_palate(target_params);
  const Mesh templ = synth_palate(PhantomParams{}).first;
  TemplateFitParams params;
  params.smoothness_weight = 1e9;
  const TemplateFitResult r = fit_template_detailed(templ, sample_surface(target, 3), target_landmarks, params);
  CHECK((r.mesh.vertices - r.posed_template.vertices).colwise().norm().maxCoeff() < 1e-3);
}

TEST_CASE("template fit errors") {
  const auto [templ, landmarks] = synth_palate(PhantomParams{});
  CHECK_THROWS_WITH(fit_template(templ, PointCloud{}, landmarks), doctest::Contains("empty cloud"));

  PointCloud far;
  far.points = Matrix3Xd::Constant(3, 1, 1000.0);
  TemplateFitParams p;
  p.icp.max_iter = 0;
  CHECK_THROWS_WITH(fit_template(templ, far, landmarks, p), doctest::Contains("no correspondences"));
}

TEST_CASE("sparse displacement solve matches a dense reference") {
  std::mt19937_64 rng(3);
  const Mesh m = palate::testing::random_grid_mesh(rng, 5, 4);
  const auto lap = uniform_laplacian(m);
  const Index n = m.vertex_count();
  std::vector<bool> has(static_cast<std::size_t>(n));
  std::bernoulli_distribution coin(0.6);
  for (Index j = 0; j < n; ++j) has[j] = coin(rng);
  const Matrix3Xd residual = Matrix3Xd::Random(3, n);

  for (double w : {0.0, 0.5, 3.0}) {
    const Matrix3Xd sparse = solve_displacements(lap, has, residual, w, 1e-3);

    // Dense oracle built from scratch: (S + w(LᵀL + εI)) D = S R.
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    const auto nbrs = vertex_neighbors(m);
    for (Index j = 0; j < n; ++j) {
      L(j, j) = 1.0;
      for (int k : nbrs[j]) L(j, k) = -1.0 / static_cast<double>(nbrs[j].size());
    }
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    for (Index j = 0; j < n; ++j) S(j, j) = has[j] ? 1.0 : 0.0;
    const double ridge = w > 0 ? w * 1e-3 : 1e-12;
    const Eigen::MatrixXd A = S + w * L.transpose() * L + ridge * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd dense = A.fullPivLu().solve(S * residual.transpose());
    CHECK((sparse - dense.transpose()).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("energy decreases per solve and refresh respects the cutoff slack") {
  PhantomParams target_params;
  target_params.dome_height = 17.0;
  target_params.concavity = 0.3;
  const auto [target, target_landmarks] = synth_palate(target_params);
  const Mesh templ = synth_palate(PhantomParams{}).first;
  TemplateFitParams params;
  const TemplateFitResult r = fit_template_detailed(templ, sample_surface(target, 2), target_landmarks, params);
  REQUIRE(r.iterations >= 2);
  for (std::size_t i = 0; i < r.energy_after.size(); ++i)
    CHECK(r.energy_after[i] <= r.energy_before[i] * (1 + 1e-12) + 1e-12);
  const double slack = params.correspondence_cutoff * params.correspondence_cutoff;
  for (std::size_t i = 0; i < r.data_after_refresh.size(); ++i)
    CHECK(r.data_after_refresh[i] <= r.data_before_refresh[i] + r.gained_correspondences[i] * slack + 1e-9);
  CHECK(r.mesh.faces == templ.faces);
}
