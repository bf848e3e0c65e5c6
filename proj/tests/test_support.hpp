#ifndef PALATE_TEST_SUPPORT_HPP
#define PALATE_TEST_SUPPORT_HPP

#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Geometry>

#include "palate/align.hpp"
#include "palate/mesh.hpp"
#include "palate/phantom.hpp"
#include "palate/shapespace.hpp"

namespace palate::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("palate_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline SimilarityTransform random_similarity(std::mt19937_64& rng, double min_scale = 0.5,
                                             double max_scale = 2.0) {
  std::uniform_real_distribution<double> s(min_scale, max_scale);
  std::uniform_real_distribution<double> t(-20.0, 20.0);
  SimilarityTransform out;
  out.scale = s(rng);
  out.rotation = random_rotation(rng);
  out.translation = Vector3d(t(rng), t(rng), t(rng));
  return out;
}

/// Small random height-field grid mesh (nx x ny vertices) with jittered
/// positions; landmark indices are not set.
inline Mesh random_grid_mesh(std::mt19937_64& rng, int nx, int ny, double jitter = 0.3) {
  std::uniform_real_distribution<double> u(-jitter, jitter);
  Mesh m;
  m.vertices.resize(3, static_cast<Index>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      m.vertices.col(j * nx + i) = Vector3d(i + u(rng), j + u(rng), 2.0 * u(rng));
  m.faces.resize(3, 2 * static_cast<Index>(nx - 1) * (ny - 1));
  Index f = 0;
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const int a = j * nx + i, b = a + 1, c = a + nx, d = c + 1;
      m.faces.col(f++) = Eigen::Vector3i(a, b, d);
      m.faces.col(f++) = Eigen::Vector3i(a, d, c);
    }
  return m;
}

/// Phantom population, Procrustes aligned and trained with every mode kept.
struct TrainedPhantoms {
  std::vector<Mesh> population;
  std::vector<Mesh> aligned;
  ShapeSpaceModel model;
};

inline TrainedPhantoms train_phantoms(int n = 12, double spread = 0.4, std::uint64_t seed = 7,
                                      PhantomParams base = {}) {
  TrainedPhantoms out;
  out.population = synth_population(base, n, spread, seed);
  const GpaResult g = gpa(out.population);
  for (const auto& a : g.aligned) out.aligned.push_back(with_vertices(out.population.front(), a));
  out.model = train(out.aligned, 1.0);
  return out;
}

/// Similarity taking the model frame to the millimeter frame of `base`.
inline SimilarityTransform model_to_phantom_frame(const ShapeSpaceModel& model,
                                                  const PhantomParams& base = {}) {
  const Mesh mean = generate(model, CoefficientVector::Zero(model.modes()));
  return similarity_from_landmarks(landmark_positions(mean), landmark_positions(synth_palate(base).first),
                                   true);
}

}  // namespace palate::testing

#endif  // PALATE_TEST_SUPPORT_HPP
